/// <reference types="vitest/config" />
import { defineConfig } from "vite";

// The dev server proxies /api/* to the inference service so the page and
// the API share an origin. Point the UI elsewhere via the in-app field.
export default defineConfig({
    server: {
        proxy: {
            "/api": {
                target: "http://localhost:8765",
                changeOrigin: true,
                rewrite: (path) => path.replace(/^\/api/, ""),
            },
        },
    },
    test: {
        environment: "node",
        include: ["tests/**/*.test.ts"],
    },
});
