import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));

export function loadFixture<T>(name: string): T {
  const raw = readFileSync(path.join(here, "fixtures", name), "utf-8");
  return JSON.parse(raw) as T;
}
