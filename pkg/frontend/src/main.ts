import { App } from "./app";

window.addEventListener("DOMContentLoaded", () => {
  const app = new App(document);
  app.startPolling();
  void app.loadScene();
});
