// jsdom has no 2D canvas; its getContext logs a "not implemented" error
// through the virtual console before throwing. Returning null instead
// keeps test output clean and exercises drawScene's no-context path.
if (typeof HTMLCanvasElement !== "undefined") {
  HTMLCanvasElement.prototype.getContext = (() =>
    null) as typeof HTMLCanvasElement.prototype.getContext;
}
