/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_runsummary_free: (a: number, b: number) => void;
export const demo_m: (a: number) => number;
export const demo_n: (a: number) => number;
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_optimize: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demo_spectrum: (a: number, b: number) => [number, number, number, number];
export const demo_target: (a: number) => [number, number];
export const demo_uncontrolled: (a: number) => [number, number, number, number];
export const runsummary_costs: (a: number) => [number, number];
export const runsummary_exit: (a: number) => [number, number];
export const runsummary_final_cost: (a: number) => number;
export const runsummary_modes: (a: number) => [number, number];
export const runsummary_state: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
