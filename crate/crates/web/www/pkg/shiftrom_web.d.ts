/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    constructor(example: number, scale: number);
    optimize(method: string, modes: number, iters: number): RunSummary;
    /**
     * Lab-frame spectrum followed by the co-moving one, `count` values each.
     */
    spectrum(count: number): Float64Array;
    target(): Float64Array;
    uncontrolled(): Float64Array;
    readonly m: number;
    readonly n: number;
}

export class RunSummary {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Full-order cost at every iteration.
     */
    costs(): Float64Array;
    modes(): Float64Array;
    state(): Float64Array;
    readonly exit: string;
    readonly final_cost: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_runsummary_free: (a: number, b: number) => void;
    readonly demo_m: (a: number) => number;
    readonly demo_n: (a: number) => number;
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_optimize: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_spectrum: (a: number, b: number) => [number, number, number, number];
    readonly demo_target: (a: number) => [number, number];
    readonly demo_uncontrolled: (a: number) => [number, number, number, number];
    readonly runsummary_costs: (a: number) => [number, number];
    readonly runsummary_exit: (a: number) => [number, number];
    readonly runsummary_final_cost: (a: number) => number;
    readonly runsummary_modes: (a: number) => [number, number];
    readonly runsummary_state: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
