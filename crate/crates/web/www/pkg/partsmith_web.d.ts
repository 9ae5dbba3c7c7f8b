/* tslint:disable */
/* eslint-disable */

/**
 * One generated shape plus a working copy of its poses.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major depth image; empty pixels hold the background value.
     */
    depth(): Float64Array;
    gridSide(): number;
    id(): string;
    /**
     * Per pixel, the index of the part covering it plus one; 0 for
     * background.
     */
    labels(): Uint8Array;
    constructor(template: string, seed: number);
    partCount(): number;
    /**
     * Replaces the working poses with ground truth plus uniform noise:
     * translations up to `translation` per axis, rotations
     * about a random axis by up to `rotation_deg`. Returns
     * `[part accuracy, visible accuracy, invisible accuracy, shape chamfer]`;
     * an accuracy with no parts in its group is NaN.
     */
    perturb(translation: number, rotation_deg: number, seed: number): Float64Array;
    /**
     * Current assembly seen from an orbiting viewpoint, as flat
     * `[x, y, depth, part]` quadruples in view units; larger depth is closer.
     */
    view(yaw_deg: number, pitch_deg: number): Float64Array;
    /**
     * 1 for parts seen in the image, 0 for fully occluded ones.
     */
    visibility(): Uint8Array;
}

/**
 * The cylinder itself, as flat `[x, y, z]` triples, for drawing.
 */
export function cylinderPoints(angle_deg: number, about_own_axis: boolean): Float64Array;

/**
 * `[chamfer rotation loss, point-wise L2 rotation loss]` for a cylinder
 * rotated by `angle_deg` about its own axis or about a
 * perpendicular axis. The cylinder is sampled in rings of 12 points.
 */
export function rotationLosses(angle_deg: number, about_own_axis: boolean): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly cylinderPoints: (a: number, b: number) => [number, number];
    readonly rotationLosses: (a: number, b: number) => [number, number];
    readonly scene_depth: (a: number) => [number, number];
    readonly scene_gridSide: (a: number) => number;
    readonly scene_id: (a: number) => [number, number];
    readonly scene_labels: (a: number) => [number, number];
    readonly scene_new: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_partCount: (a: number) => number;
    readonly scene_perturb: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_view: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_visibility: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
