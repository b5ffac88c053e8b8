/* tslint:disable */
/* eslint-disable */

export class AnomalyDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Pastes a `size×size` patch of a foreign grating centred at `(x, y)`.
     */
    add_defect(x: number, y: number, size: number): void;
    /**
     * Mean combined score inside the pasted patches minus the mean outside.
     */
    contrast(): number;
    image_rgba(): Uint8Array;
    is_trained(): boolean;
    /**
     * `"e"`, `"v"` or `"combined"` as RGBA; each map is scaled to its own
     * range.
     */
    map_rgba(kind: string): Uint8Array;
    /**
     * Raw values of one map, row-major.
     */
    map_values(kind: string): Float32Array;
    /**
     * Ground-truth mask of the pasted patches, one byte per pixel.
     */
    mask(): Uint8Array;
    /**
     * A texture category of `side×side` images; nothing is trained yet.
     */
    constructor(seed: number, side: number);
    /**
     * Removes every pasted defect.
     */
    reset(): void;
    /**
     * Computes the three maps for the current image.
     */
    score(): void;
    side(): number;
    /**
     * Pretrains a 17×17 teacher on generic images, fits `students`
     * students on the category and calibrates on held-out images.
     * Returns the final teacher loss.
     */
    train(teacher_iterations: number, students: number, student_epochs: number): number;
}

/**
 * Score maps `separation·mask + noise` for a handful of random defects.
 */
export class ProDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Interleaved `(fpr, pro)` pairs in order of decreasing threshold.
     */
    curve(): Float64Array;
    images(): number;
    constructor(seed: number, separation: number, fpr_limit: number);
    pro_auc(): number;
    /**
     * ROC AUC of the per-image maximum score.
     */
    roc_auc(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_anomalydemo_free: (a: number, b: number) => void;
    readonly __wbg_prodemo_free: (a: number, b: number) => void;
    readonly anomalydemo_add_defect: (a: number, b: number, c: number, d: number) => void;
    readonly anomalydemo_contrast: (a: number) => [number, number, number];
    readonly anomalydemo_image_rgba: (a: number) => [number, number];
    readonly anomalydemo_is_trained: (a: number) => number;
    readonly anomalydemo_map_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly anomalydemo_map_values: (a: number, b: number, c: number) => [number, number, number, number];
    readonly anomalydemo_mask: (a: number) => [number, number];
    readonly anomalydemo_new: (a: number, b: number) => [number, number, number];
    readonly anomalydemo_reset: (a: number) => void;
    readonly anomalydemo_score: (a: number) => [number, number];
    readonly anomalydemo_side: (a: number) => number;
    readonly anomalydemo_train: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly prodemo_curve: (a: number) => [number, number];
    readonly prodemo_images: (a: number) => number;
    readonly prodemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly prodemo_pro_auc: (a: number) => number;
    readonly prodemo_roc_auc: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
