/* tslint:disable */
/* eslint-disable */

/**
 * A 2-D clustered corpus. Points are drawn where they were generated;
 * search sees only their directions.
 */
export class Explorer {
    free(): void;
    [Symbol.dispose](): void;
    constructor(classes: number, per_class: number, noise: number, seed: number);
    pointsJson(): string;
    searchJson(x: number, y: number, n: number): string;
}

export function ablationJson(classes: number, dimension: number, noise: number, seed: number): string;

export function imbalanceJson(decay: number, noise: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_explorer_free: (a: number, b: number) => void;
    readonly ablationJson: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explorer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly explorer_pointsJson: (a: number) => [number, number];
    readonly explorer_searchJson: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly imbalanceJson: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
