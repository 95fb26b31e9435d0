import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // The e2e test boots the real annotation service and drives it over HTTP.
    testTimeout: 90_000,
    hookTimeout: 90_000,
    pool: "forks",
  },
});
