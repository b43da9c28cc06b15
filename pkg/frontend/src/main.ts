import { ApiClient } from "./api.js";
import { mountPicker } from "./app.js";

const base = (window as unknown as { EXAMFORGE_API?: string }).EXAMFORGE_API ?? "";
const root = document.querySelector<HTMLElement>("#app");
if (root) {
  mountPicker(root, new ApiClient(base));
}
