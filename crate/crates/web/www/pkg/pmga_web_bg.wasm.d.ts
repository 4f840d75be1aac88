/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_learner_free: (a: number, b: number) => void;
export const learner_frontier: (a: number, b: number) => [number, number, number, number];
export const learner_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const learner_objective_history: (a: number) => [number, number];
export const learner_step: (a: number, b: number) => [number, number, number, number];
export const lqg_frontier: (a: number, b: number, c: number) => [number, number, number, number];
export const sample_bound: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
