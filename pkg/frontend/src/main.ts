import { initApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const apiBase =
    new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8060";
  initApp(root, { apiBase });
}
