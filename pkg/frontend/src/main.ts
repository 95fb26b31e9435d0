import { createApp } from "./app.js";

const mount = document.getElementById("root");
if (!mount) {
  throw new Error("missing #root mount point");
}
// Served by the annotation service itself, so the API is same-origin.
createApp(mount, { baseUrl: "" });
