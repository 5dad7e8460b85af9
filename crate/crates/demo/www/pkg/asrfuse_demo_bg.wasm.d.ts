/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const fusion_sweep: (a: number) => [number, number, number, number];
export const mapsswe: (a: number, b: number, c: number) => [number, number, number, number];
export const mdn_density: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
export const mdn_point: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
