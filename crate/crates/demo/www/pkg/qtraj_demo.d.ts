/* tslint:disable */
/* eslint-disable */

/**
 * `[Q(infinity), Q(t_1), ..., Q(t_n)]` of the photon counter with
 * `|beta3|^2 = 0.45` over windows `t_i = i * t_max / n`.
 */
export function q3_curve(omega_r: number, delta_nu: number, k1: number, theta1: number, t_max: number, n: number): Float64Array;

/**
 * `[s_el, S_inel(mu_0), ..., S_inel(mu_{n-1})]` on `n` points of `[0, mu_max]`
 * for the second homodyne channel (`|alpha2|^2 = 0.45`).
 */
export function spectrum_curve(omega_r: number, delta_nu: number, k1: number, theta1: number, theta2: number, mu_max: number, n: number): Float64Array;

/**
 * One normalized trajectory of the counting configuration, stored every
 * 20 steps of `0.005`: rows of `[t, x, y, z, N3]` flattened.
 */
export function trajectory(omega_r: number, delta_nu: number, k1: number, theta1: number, t_end: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly q3_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly spectrum_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly trajectory: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
