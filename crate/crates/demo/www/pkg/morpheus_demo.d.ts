/* tslint:disable */
/* eslint-disable */

export function lrSchedule(warmup_epochs: number, lr_start: number, lr_peak: number, lr_final: number, epochs: number, points: number): Float64Array;

/**
 * JSON [`PlanView`] for the given omics token counts.
 */
export function maskPlan(rna: number, dnam: number, cnv: number, ratio: number, alpha: number, seed: bigint): string;

/**
 * JSON [`SurvivalView`] for one patient's interval logits.
 */
export function survivalCurve(logits: Float64Array): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly lrSchedule: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly maskPlan: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly survivalCurve: (a: number, b: number) => [number, number, number, number];
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
