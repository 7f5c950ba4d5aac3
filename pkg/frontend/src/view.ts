import type { Polarity, SessionInfo } from './types';

export type Tool = 'positive' | 'negative' | 'erase';
export type OverlayMode = 'confidence' | 'binarized' | 'none';

/**
 * Client-side mirror of one session.
 *
 * The point list only ever reflects server-acknowledged state: a click
 * stages a request, and markers update from the response payload (keyed by
 * its version number), so the UI never shows a point the server does not
 * have, and never drops one it does.
 */
export interface ViewState {
  sessionId: string | null;
  height: number;
  width: number;
  tool: Tool;
  zoom: number;
  points: [number, number, number][];
  pointsVersion: number;
  overlayMode: OverlayMode;
  overlayOpacity: number;
  resultVersions: number[];
  activeJob: string | null;
}

export const initialViewState = (): ViewState => ({
  sessionId: null,
  height: 0,
  width: 0,
  tool: 'positive',
  zoom: 8,
  points: [],
  pointsVersion: -1,
  overlayMode: 'confidence',
  overlayOpacity: 0.8,
  resultVersions: [],
  activeJob: null,
});

/** Fold a server session payload into the view; stale versions are ignored. */
export function applySession(state: ViewState, session: SessionInfo): ViewState {
  if (state.sessionId === session.session_id && session.points_version < state.pointsVersion) {
    return state;
  }
  return {
    ...state,
    sessionId: session.session_id,
    height: session.height,
    width: session.width,
    points: session.points.map(([r, c, p]) => [r, c, p] as [number, number, number]),
    pointsVersion: session.points_version,
    resultVersions: [...session.result_versions],
    activeJob: session.active_job,
  };
}

/** Canvas click -> raster pixel under the current zoom; null when outside. */
export function canvasToPixel(
  state: ViewState,
  canvasX: number,
  canvasY: number,
): { row: number; col: number } | null {
  const col = Math.floor(canvasX / state.zoom);
  const row = Math.floor(canvasY / state.zoom);
  if (row < 0 || row >= state.height || col < 0 || col >= state.width) return null;
  return { row, col };
}

/** The edit a click requests, given the current tool; null = no-op. */
export function clickEdit(
  state: ViewState,
  row: number,
  col: number,
): { add: [number, number, number][]; remove: [number, number][] } | null {
  const existing = state.points.find(([r, c]) => r === row && c === col);
  if (state.tool === 'erase') {
    return existing ? { add: [], remove: [[row, col]] } : null;
  }
  const polarity: Polarity = state.tool === 'positive' ? 1 : -1;
  if (existing && existing[2] === polarity) return null;
  return { add: [[row, col, polarity]], remove: [] };
}

/** Marker glyph and color per polarity (+ and - rendered distinctly). */
export const markerStyle = (polarity: number) =>
  polarity > 0
    ? { glyph: '+', color: '#b2182b' }
    : { glyph: '−', color: '#2166ac' };
