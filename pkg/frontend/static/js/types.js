// Document shapes exchanged with the service. The UI never recomputes any
// of these numbers; it renders what the server returned.
export {};
