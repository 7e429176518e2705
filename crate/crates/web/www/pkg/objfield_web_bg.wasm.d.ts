/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_editor_free: (a: number, b: number) => void;
export const editor_edit: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
export const editor_manipulate: (a: number, b: number, c: number) => [number, number, number, number];
export const editor_new: (a: number, b: number) => [number, number, number];
export const editor_numObjects: (a: number) => number;
export const editor_pick: (a: number, b: number, c: number) => [number, number, number];
export const editor_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const editor_undo: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
