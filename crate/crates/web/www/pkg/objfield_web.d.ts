/* tslint:disable */
/* eslint-disable */

export class Editor {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Moves object `target` by `(tx, ty, tz)`, turns it by yaw, pitch and
     * roll (degrees, about z, y and x) and scales it, all about its centre.
     */
    edit(target: number, tx: number, ty: number, tz: number, yaw: number, pitch: number, roll: number, scale: number): string;
    /**
     * Applies a manipulation spec given as JSON and renders the result.
     */
    manipulate(spec_json: string): string;
    /**
     * Editor on the built-in scene rendering `resolution` x `resolution`
     * frames with `samples` coarse and `samples` fine samples per ray.
     */
    constructor(resolution: number, samples: number);
    numObjects(): number;
    /**
     * Object id under the pixel of the last frame, or 0 for empty space.
     */
    pick(u: number, v: number): number;
    /**
     * Moves the orbit camera and renders the frame.
     */
    render(azimuth_deg: number, elevation_deg: number, radius: number): string;
    /**
     * Reverts the last applied edit; returns the frame, or an error when
     * there is nothing to undo.
     */
    undo(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_editor_free: (a: number, b: number) => void;
    readonly editor_edit: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly editor_manipulate: (a: number, b: number, c: number) => [number, number, number, number];
    readonly editor_new: (a: number, b: number) => [number, number, number];
    readonly editor_numObjects: (a: number) => number;
    readonly editor_pick: (a: number, b: number, c: number) => [number, number, number];
    readonly editor_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly editor_undo: (a: number) => [number, number, number, number];
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
