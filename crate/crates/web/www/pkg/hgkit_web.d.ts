/* tslint:disable */
/* eslint-disable */

/**
 * Full metrics report for JSONL detections and ground truth.
 */
export function evaluate_jsonl(dets: string, gts: string, classes: number, iou: number): string;

/**
 * Hypergraph over the cells of a scalar grid. Each cell's feature is its
 * value plus its position scaled by `spatial`, so neighbourhoods mix
 * appearance and location.
 */
export function grid_hypergraph(sketch: Float64Array, height: number, width: number, metric: string, percentile: number, spatial: number): string;

/**
 * Eigen-CAM of a synthetic activation: `channels` random mixtures of the
 * sketch, its inverse and noise. Returns `out_h * out_w` values in [0, 1].
 */
export function sketch_cam(sketch: Float64Array, height: number, width: number, channels: number, noise: number, seed: bigint, out_h: number, out_w: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly evaluate_jsonl: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly grid_hypergraph: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly sketch_cam: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint, h: number, i: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
