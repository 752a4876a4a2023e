import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    // the end-to-end test runs a scaled wall-clock infusion (~20 s)
    testTimeout: 120_000,
    hookTimeout: 120_000,
    fileParallelism: false,
  },
});
