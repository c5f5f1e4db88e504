import { ApiClient } from "./api";
import { App } from "./app";
import { apiBase } from "./config";

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const app = new App(new ApiClient(apiBase()), root);
  void app.showList();
});
