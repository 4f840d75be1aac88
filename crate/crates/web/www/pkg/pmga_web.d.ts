/* tslint:disable */
/* eslint-disable */

/**
 * Gradient ascent on the mixed indicator, advanced a few iterations at a time.
 */
export class Learner {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Frontier at the current parameters; see [`lqg_frontier`].
     */
    frontier(points: number): string;
    constructor(lambda: number, rate: number, rho0: Float64Array);
    /**
     * Objective value recorded at every iteration so far.
     */
    objective_history(): Float64Array;
    /**
     * Runs `iterations` updates and returns JSON
     * `{iteration, objective, rho, diverged}`.
     */
    step(iterations: number): string;
}

/**
 * Frontier of the free LQG map at `rho`, as JSON
 * `{points, area, hypervolume, dominated}`.
 */
export function lqg_frontier(rho: Float64Array, points: number): string;

/**
 * Trajectories needed for a Hessian estimate within `epsilon` with
 * probability `1 - delta`.
 */
export function sample_bound(r_bar: number, d_bar: number, g_bar: number, gamma: number, horizon: number, epsilon: number, delta: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_learner_free: (a: number, b: number) => void;
    readonly learner_frontier: (a: number, b: number) => [number, number, number, number];
    readonly learner_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly learner_objective_history: (a: number) => [number, number];
    readonly learner_step: (a: number, b: number) => [number, number, number, number];
    readonly lqg_frontier: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sample_bound: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
