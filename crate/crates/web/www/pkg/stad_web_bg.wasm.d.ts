/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_anomalydemo_free: (a: number, b: number) => void;
export const __wbg_prodemo_free: (a: number, b: number) => void;
export const anomalydemo_add_defect: (a: number, b: number, c: number, d: number) => void;
export const anomalydemo_contrast: (a: number) => [number, number, number];
export const anomalydemo_image_rgba: (a: number) => [number, number];
export const anomalydemo_is_trained: (a: number) => number;
export const anomalydemo_map_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const anomalydemo_map_values: (a: number, b: number, c: number) => [number, number, number, number];
export const anomalydemo_mask: (a: number) => [number, number];
export const anomalydemo_new: (a: number, b: number) => [number, number, number];
export const anomalydemo_reset: (a: number) => void;
export const anomalydemo_score: (a: number) => [number, number];
export const anomalydemo_side: (a: number) => number;
export const anomalydemo_train: (a: number, b: number, c: number, d: number) => [number, number, number];
export const prodemo_curve: (a: number) => [number, number];
export const prodemo_images: (a: number) => number;
export const prodemo_new: (a: number, b: number, c: number) => [number, number, number];
export const prodemo_pro_auc: (a: number) => number;
export const prodemo_roc_auc: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
