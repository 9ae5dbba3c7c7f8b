/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const cylinderPoints: (a: number, b: number) => [number, number];
export const rotationLosses: (a: number, b: number) => [number, number];
export const scene_depth: (a: number) => [number, number];
export const scene_gridSide: (a: number) => number;
export const scene_id: (a: number) => [number, number];
export const scene_labels: (a: number) => [number, number];
export const scene_new: (a: number, b: number, c: number) => [number, number, number];
export const scene_partCount: (a: number) => number;
export const scene_perturb: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const scene_view: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_visibility: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
