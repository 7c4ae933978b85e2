/**
 * Pure rendering core: turn one window response into a 2D slice.
 *
 * The response is a list of block records (global cell start and count
 * per axis at one depth and stride) plus a packed payload, block-major,
 * selected fields in canonical order, C-ordered cells.  `assembleSlice`
 * picks the populated plane nearest the requested position along the
 * slice axis and scatters every record's contribution into one raster.
 *
 * The raster is later stretched over the window's world box.  Cell
 * edges may be off by up to one cell at the window border since the
 * wire format names cells by index, not by world position; sphere
 * outlines come from exact world geometry in the status frame.
 *
 * Everything here is side-effect free so it can be tested without a
 * canvas; the DOM glue lives in main.ts.
 */

import {
  BlockRecord,
  Box,
  F_FLAGS,
  FIELD_ORDER,
  Vec3,
  WindowResponse,
} from "./protocol.js";
import { planeAxes } from "./view.js";

export interface SliceView {
  /** Raster size across the horizontal plane axis. */
  nh: number;
  /** Raster size across the vertical plane axis. */
  nv: number;
  /** Scalar per raster cell, NaN where no block covers the plane. */
  values: Float32Array;
  /** Global level index of the plane actually shown. */
  planeIndex: number;
  /** Number of raster cells holding data. */
  filled: number;
  axis: 0 | 1 | 2;
  depth: number;
  stride: Vec3;
}

/** Byte offset of one field's array inside a record's payload span. */
function fieldOffset(mask: number, field: number, cells: number): number {
  let off = 0;
  for (const [bit] of FIELD_ORDER) {
    if (bit === field) return off;
    if (mask & bit) off += cells * (bit === F_FLAGS ? 1 : 4);
  }
  throw new Error(`field 0x${field.toString(16)} not in response mask`);
}

/** Total payload bytes of one record. */
function recordBytes(mask: number, cells: number): number {
  let total = 0;
  for (const [bit] of FIELD_ORDER) {
    if (mask & bit) total += cells * (bit === F_FLAGS ? 1 : 4);
  }
  return total;
}

function lastIndex(rec: BlockRecord, axis: number, stride: Vec3): number {
  return rec.start[axis] + (rec.count[axis] - 1) * stride[axis];
}

/**
 * Build a 2D slice of one field from a window response.
 *
 * `frac` in [0, 1] picks the plane along `axis`; the nearest populated
 * plane wins.  Returns null when the response holds no cells or the
 * requested field is absent from its mask.
 */
export function assembleSlice(
  resp: WindowResponse,
  payload: Uint8Array,
  field: number,
  axis: 0 | 1 | 2,
  frac: number,
): SliceView | null {
  if (resp.cellCount === 0 || resp.blocks.length === 0) return null;
  if ((resp.fields & field) === 0) return null;
  const st = resp.stride;
  const [ha, va] = planeAxes(axis);

  // pick the populated plane nearest the requested fraction
  let gMin = Infinity;
  let gMax = -Infinity;
  for (const rec of resp.blocks) {
    gMin = Math.min(gMin, rec.start[axis]);
    gMax = Math.max(gMax, lastIndex(rec, axis, st));
  }
  const target = gMin + Math.min(Math.max(frac, 0), 1) * (gMax - gMin);
  let plane = gMin;
  let best = Infinity;
  for (const rec of resp.blocks) {
    const first = rec.start[axis];
    const last = lastIndex(rec, axis, st);
    const near = Math.min(Math.max(target, first), last);
    // snap to this record's stride lattice
    const snapped = first + Math.round((near - first) / st[axis]) * st[axis];
    const cand = Math.min(snapped, last);
    const d = Math.abs(cand - target);
    if (d < best || (d === best && cand < plane)) {
      best = d;
      plane = cand;
    }
  }

  // raster extent: bounding box of the whole response in plane axes
  let hMin = Infinity;
  let hMax = -Infinity;
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const rec of resp.blocks) {
    hMin = Math.min(hMin, rec.start[ha]);
    hMax = Math.max(hMax, lastIndex(rec, ha, st));
    vMin = Math.min(vMin, rec.start[va]);
    vMax = Math.max(vMax, lastIndex(rec, va, st));
  }
  const nh = Math.floor((hMax - hMin) / st[ha]) + 1;
  const nv = Math.floor((vMax - vMin) / st[va]) + 1;
  const values = new Float32Array(nh * nv).fill(NaN);

  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const isFlags = field === F_FLAGS;
  let base = 0;
  let filled = 0;
  for (const rec of resp.blocks) {
    const cells = rec.count[0] * rec.count[1] * rec.count[2];
    const span = recordBytes(resp.fields, cells);
    const hit =
      plane >= rec.start[axis] &&
      plane <= lastIndex(rec, axis, st) &&
      (plane - rec.start[axis]) % st[axis] === 0;
    if (hit) {
      const fOff = base + fieldOffset(resp.fields, field, cells);
      const ia = (plane - rec.start[axis]) / st[axis];
      const idx: Vec3 = [0, 0, 0];
      idx[axis] = ia;
      for (let ih = 0; ih < rec.count[ha]; ih++) {
        idx[ha] = ih;
        const rh = (rec.start[ha] + ih * st[ha] - hMin) / st[ha];
        for (let iv = 0; iv < rec.count[va]; iv++) {
          idx[va] = iv;
          const rv = (rec.start[va] + iv * st[va] - vMin) / st[va];
          // payload cells are C-ordered over (x, y, z)
          const flat = (idx[0] * rec.count[1] + idx[1]) * rec.count[2] + idx[2];
          const v = isFlags
            ? dv.getUint8(fOff + flat)
            : dv.getFloat32(fOff + 4 * flat, true);
          values[rv * nh + rh] = v;
          filled++;
        }
      }
    }
    base += span;
  }
  return {
    nh,
    nv,
    values,
    planeIndex: plane,
    filled,
    axis,
    depth: resp.depth,
    stride: st,
  };
}

// ---- colour --------------------------------------------------------------

// dark blue -> cyan -> green -> yellow -> warm red, perceptually ordered
const ANCHORS: [number, number, number][] = [
  [13, 8, 135],
  [70, 3, 159],
  [114, 1, 168],
  [156, 23, 158],
  [189, 55, 134],
  [216, 87, 107],
  [237, 121, 83],
  [251, 159, 58],
  [253, 202, 38],
  [240, 249, 33],
];

/** Map t in [0, 1] (clamped) to an RGB triple on the fixed ramp. */
export function colormap(t: number): [number, number, number] {
  const f = Math.min(Math.max(t, 0), 1) * (ANCHORS.length - 1);
  const i = Math.min(Math.floor(f), ANCHORS.length - 2);
  const w = f - i;
  const a = ANCHORS[i];
  const b = ANCHORS[i + 1];
  return [
    Math.round(a[0] + w * (b[0] - a[0])),
    Math.round(a[1] + w * (b[1] - a[1])),
    Math.round(a[2] + w * (b[2] - a[2])),
  ];
}

/**
 * Colour a slice with a fixed linear scale from vmin to vmax.  Absent
 * cells come out transparent.  The scale is supplied, not derived, so
 * zoom levels stay comparable.
 */
export function rasterize(slice: SliceView, vmin: number, vmax: number): Uint8ClampedArray {
  const px = new Uint8ClampedArray(slice.nh * slice.nv * 4);
  const span = vmax > vmin ? vmax - vmin : 1;
  for (let i = 0; i < slice.values.length; i++) {
    const v = slice.values[i];
    if (Number.isNaN(v)) continue; // alpha stays 0
    const [r, g, b] = colormap((v - vmin) / span);
    px[4 * i] = r;
    px[4 * i + 1] = g;
    px[4 * i + 2] = b;
    px[4 * i + 3] = 255;
  }
  return px;
}

/** Evenly spaced legend tick values from vmin to vmax inclusive. */
export function legendTicks(vmin: number, vmax: number, n = 5): number[] {
  const out = new Array<number>(n);
  for (let i = 0; i < n; i++) out[i] = vmin + ((vmax - vmin) * i) / (n - 1);
  return out;
}

// ---- sphere overlay ------------------------------------------------------

export interface Outline {
  /** Circle centre in plane world coordinates. */
  h: number;
  v: number;
  /** Circle radius in world units. */
  r: number;
}

/**
 * Circles where the slice plane cuts the specimen spheres.  `plane` is
 * the world coordinate of the slice along `axis`.
 */
export function sphereOutlines(
  spheres: [number, number, number, number][],
  axis: 0 | 1 | 2,
  plane: number,
): Outline[] {
  const [ha, va] = planeAxes(axis);
  const out: Outline[] = [];
  for (const s of spheres) {
    const d = s[axis] - plane;
    if (Math.abs(d) < s[3]) {
      out.push({ h: s[ha], v: s[va], r: Math.sqrt(s[3] * s[3] - d * d) });
    }
  }
  return out;
}

/** Linear map from plane world coordinates to canvas pixels (v flipped). */
export function planeMapper(
  window: Box,
  axis: 0 | 1 | 2,
  width: number,
  height: number,
): { toPx(h: number, v: number): [number, number]; scaleH: number; scaleV: number } {
  const [ha, va] = planeAxes(axis);
  const h0 = window[ha];
  const v0 = window[va];
  const hw = window[ha + 3] - h0 || 1;
  const vw = window[va + 3] - v0 || 1;
  const scaleH = width / hw;
  const scaleV = height / vw;
  return {
    toPx(h: number, v: number): [number, number] {
      return [(h - h0) * scaleH, height - (v - v0) * scaleV];
    },
    scaleH,
    scaleV,
  };
}
