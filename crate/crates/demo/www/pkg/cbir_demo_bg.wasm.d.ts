/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_explorer_free: (a: number, b: number) => void;
export const ablationJson: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const explorer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const explorer_pointsJson: (a: number) => [number, number];
export const explorer_searchJson: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const imbalanceJson: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
