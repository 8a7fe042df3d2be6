/// <reference types="vitest" />
import { defineConfig } from "vite";

// The dev server proxies /api to a locally running `emoface serve` instance,
// so the page and the service share an origin in development too.
export default defineConfig({
  server: {
    proxy: {
      "/api": {
        target: process.env.EMOFACE_API ?? "http://127.0.0.1:8000",
        changeOrigin: true,
      },
    },
  },
  test: {
    environment: "jsdom",
  },
});
