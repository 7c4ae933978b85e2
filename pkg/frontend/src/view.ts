/**
 * View state and the pure geometry/budget logic behind the controls.
 *
 * The canvas shows one axis-aligned slice of a box-shaped window onto
 * the simulation domain.  Every outgoing window request is derived from
 * this state through `requestFor`, which is the single place the byte
 * budget enters a request: whatever the slider says is what the server
 * is asked to honour, on every request, at every zoom level.
 */

import { Box, F_UMAG, WindowRequest } from "./protocol.js";

export interface ViewState {
  /** Current window, always clipped to the domain. */
  window: Box;
  /** Domain bounds from the session greeting. */
  domain: Box;
  /** Payload budget in bytes, straight from the slider. */
  budget: number;
  /** Field selector bitmask for the rendered scalar. */
  fields: number;
  /** Slice normal: 0 = x, 1 = y, 2 = z. */
  sliceAxis: 0 | 1 | 2;
  /** Slice position as a fraction of the window along the axis. */
  sliceFrac: number;
}

export const DEBOUNCE_MS = 150;
export const MIN_BUDGET = 10_000;
export const MAX_BUDGET = 50_000_000;

export function initialView(domain: Box): ViewState {
  return {
    window: [...domain] as Box,
    domain: [...domain] as Box,
    budget: 1_000_000,
    fields: F_UMAG,
    sliceAxis: 2,
    sliceFrac: 0.5,
  };
}

/** Clip a box to the domain, preserving a non-negative extent. */
export function clipBox(box: Box, domain: Box): Box {
  const out = [...box] as Box;
  for (let a = 0; a < 3; a++) {
    out[a] = Math.min(Math.max(box[a], domain[a]), domain[a + 3]);
    out[a + 3] = Math.min(Math.max(box[a + 3], out[a]), domain[a + 3]);
  }
  return out;
}

/**
 * Scale the window about a centre point.  Factors below one zoom in.
 * The centre defaults to the box centre; the result is clipped.
 */
export function zoomBox(view: ViewState, factor: number, centre?: [number, number, number]): Box {
  const box = view.window;
  const out = [0, 0, 0, 0, 0, 0] as Box;
  for (let a = 0; a < 3; a++) {
    const c = centre ? centre[a] : 0.5 * (box[a] + box[a + 3]);
    const half = 0.5 * (box[a + 3] - box[a]) * factor;
    out[a] = c - half;
    out[a + 3] = c + half;
  }
  return clipBox(out, view.domain);
}

/** Translate the window by a world-space offset, clipped to the domain. */
export function panBox(view: ViewState, delta: [number, number, number]): Box {
  const box = view.window;
  const out = [...box] as Box;
  for (let a = 0; a < 3; a++) {
    let d = delta[a];
    // keep the window size: limit the shift so both faces stay inside
    d = Math.max(d, view.domain[a] - box[a]);
    d = Math.min(d, view.domain[a + 3] - box[a + 3]);
    out[a] = box[a] + d;
    out[a + 3] = box[a + 3] + d;
  }
  return out;
}

/** World coordinate of the slice plane. */
export function sliceCoord(view: ViewState): number {
  const a = view.sliceAxis;
  const f = Math.min(Math.max(view.sliceFrac, 0), 1);
  return view.window[a] + f * (view.window[a + 3] - view.window[a]);
}

/** The two in-plane axes for a slice normal, in (horizontal, vertical) order. */
export function planeAxes(axis: 0 | 1 | 2): [number, number] {
  return axis === 0 ? [1, 2] : axis === 1 ? [0, 2] : [0, 1];
}

/**
 * Build the wire request for the current view.  The budget invariant
 * lives here: maxBytes is the slider value, nothing else.
 */
export function requestFor(view: ViewState, session: number, request: number): WindowRequest {
  return {
    session,
    request,
    box: clipBox(view.window, view.domain),
    fields: view.fields,
    maxBytes: Math.round(view.budget),
  };
}

/** Map a slider position in [0, 1] to a byte budget on a log scale. */
export function budgetFromSlider(t: number, lo = MIN_BUDGET, hi = MAX_BUDGET): number {
  const f = Math.min(Math.max(t, 0), 1);
  return Math.round(Math.exp(Math.log(lo) + f * (Math.log(hi) - Math.log(lo))));
}

/** Inverse of `budgetFromSlider`, for initialising the slider. */
export function sliderFromBudget(bytes: number, lo = MIN_BUDGET, hi = MAX_BUDGET): number {
  const b = Math.min(Math.max(bytes, lo), hi);
  return (Math.log(b) - Math.log(lo)) / (Math.log(hi) - Math.log(lo));
}

export interface Debounced {
  trigger(): void;
  /** Run now if a call is pending; used on gesture end. */
  flush(): void;
  cancel(): void;
}

/**
 * Collapse a burst of triggers into one call `ms` after the last one.
 * Keeps drag and slider gestures from flooding the server.
 */
export function debounce(fn: () => void, ms = DEBOUNCE_MS): Debounced {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const clear = () => {
    if (timer !== null) {
      clearTimeout(timer);
      timer = null;
    }
  };
  return {
    trigger() {
      clear();
      timer = setTimeout(() => {
        timer = null;
        fn();
      }, ms);
    },
    flush() {
      if (timer !== null) {
        clear();
        fn();
      }
    },
    cancel: clear,
  };
}
