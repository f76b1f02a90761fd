/** Flat key=value manifests with SHA-256 chaining of upstream artifacts. */
import { createHash } from 'node:crypto';
import { readFileSync } from 'node:fs';

export type Manifest = Record<string, string>;

export function readManifest(path: string): Manifest {
  const out: Manifest = {};
  for (const line of readFileSync(path, 'utf-8').split('\n')) {
    const trimmed = line.trim();
    if (!trimmed || trimmed.startsWith('#')) continue;
    const eq = trimmed.indexOf('=');
    if (eq < 0) continue;
    out[trimmed.slice(0, eq)] = trimmed.slice(eq + 1);
  }
  return out;
}

export function sha256File(path: string): string {
  return createHash('sha256').update(readFileSync(path)).digest('hex');
}

export function checkUpstreamHash(manifest: Manifest, key: string, path: string): void {
  const recorded = manifest[key];
  if (!recorded) {
    throw new Error(`manifest lacks hash entry ${key}`);
  }
  const actual = sha256File(path);
  if (actual !== recorded) {
    throw new Error(
      `${path} hash ${actual.slice(0, 12)}... does not match recorded ${recorded.slice(0, 12)}...`,
    );
  }
}
