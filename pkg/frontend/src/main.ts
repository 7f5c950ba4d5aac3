import { ApiClient, ApiRequestError } from './api';
import { renderFilaments, renderOverlay } from './colormap';
import { parsePgm } from './pgm';
import type { JobInfo, Raster } from './types';
import {
  applySession,
  canvasToPixel,
  clickEdit,
  initialViewState,
  markerStyle,
  type OverlayMode,
  type Tool,
  type ViewState,
} from './view';

const baseUrl = (import.meta as any).env?.VITE_SERVICE_URL ?? 'http://127.0.0.1:8787';
const api = new ApiClient(baseUrl);

let state: ViewState = initialViewState();
let filaments: Raster | null = null;
let confidence: Raster | null = null;
let binarized: Raster | null = null;
let editInFlight = false;

const el = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
const baseCanvas = el<HTMLCanvasElement>('base');
const overlayCanvas = el<HTMLCanvasElement>('overlay');
const markerCanvas = el<HTMLCanvasElement>('markers');
const progressBar = el<HTMLProgressElement>('progress');
const statusLine = el<HTMLSpanElement>('status');

function toast(message: string) {
  statusLine.textContent = message;
  statusLine.classList.add('error');
  setTimeout(() => statusLine.classList.remove('error'), 4000);
}

function drawRaster(canvas: HTMLCanvasElement, rgba: Uint8ClampedArray<ArrayBuffer> | null) {
  const { width, height, zoom } = state;
  canvas.width = width * zoom;
  canvas.height = height * zoom;
  const ctx = canvas.getContext('2d')!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!rgba || width === 0) return;
  const image = new ImageData(rgba, width, height);
  ctx.imageSmoothingEnabled = false;
  createImageBitmap(image).then((bitmap) => {
    ctx.drawImage(bitmap, 0, 0, width * zoom, height * zoom);
  });
}

function drawMarkers() {
  const { width, height, zoom } = state;
  markerCanvas.width = width * zoom;
  markerCanvas.height = height * zoom;
  const ctx = markerCanvas.getContext('2d')!;
  ctx.clearRect(0, 0, markerCanvas.width, markerCanvas.height);
  ctx.font = `${zoom * 1.5}px monospace`;
  ctx.textAlign = 'center';
  ctx.textBaseline = 'middle';
  for (const [row, col, polarity] of state.points) {
    const { glyph, color } = markerStyle(polarity);
    ctx.fillStyle = color;
    ctx.fillText(glyph, (col + 0.5) * zoom, (row + 0.5) * zoom);
  }
}

function redraw() {
  drawRaster(baseCanvas, filaments ? renderFilaments(filaments) : null);
  let overlay: Uint8ClampedArray<ArrayBuffer> | null = null;
  if (state.overlayMode === 'confidence' && confidence) {
    overlay = renderOverlay(confidence, state.overlayOpacity);
  } else if (state.overlayMode === 'binarized' && binarized) {
    overlay = renderOverlay(binarized, state.overlayOpacity);
  }
  drawRaster(overlayCanvas, overlay);
  drawMarkers();
}

async function uploadFile(file: File) {
  const bytes = new Uint8Array(await file.arrayBuffer());
  try {
    const session = await api.createSession(bytes, file.name);
    state = applySession(initialViewState(), session);
    filaments = parsePgm(bytes.buffer.slice(0) as ArrayBuffer);
    confidence = null;
    binarized = null;
    statusLine.textContent = `session ${session.session_id}: ${session.height}x${session.width}`;
    redraw();
  } catch (err) {
    toast(err instanceof Error ? err.message : String(err));
  }
}

async function handleCanvasClick(ev: MouseEvent) {
  if (!state.sessionId || editInFlight) return;
  const rect = markerCanvas.getBoundingClientRect();
  const pixel = canvasToPixel(state, ev.clientX - rect.left, ev.clientY - rect.top);
  if (!pixel) return;
  const edit = clickEdit(state, pixel.row, pixel.col);
  if (!edit) return;
  editInFlight = true;
  try {
    const session = await api.editPoints(state.sessionId, edit.add, edit.remove);
    state = applySession(state, session);
    drawMarkers(); // markers render only after the server acknowledged
  } catch (err) {
    if (err instanceof ApiRequestError) toast(`edit rejected: ${err.message}`);
    else toast(String(err));
  } finally {
    editInFlight = false;
  }
}

async function runReconstruction() {
  if (!state.sessionId) return;
  const members = Number(el<HTMLInputElement>('members').value) || 4;
  const iterations = Number(el<HTMLInputElement>('iterations').value) || 3000;
  const warmStart = el<HTMLInputElement>('warm-start').checked;
  try {
    const jobId = await api.startReconstruction(state.sessionId, {
      members,
      iterations,
      strategy: 'mean',
      warm_start: warmStart,
    });
    statusLine.textContent = `job ${jobId} running`;
    const done = await api.pollJob(jobId, (job: JobInfo) => {
      progressBar.max = job.progress.iterations_total || 1;
      progressBar.value = job.progress.iteration;
    });
    const version = done.result_version!;
    confidence = await api.fetchResult(state.sessionId, version, 'conf');
    binarized = await api.fetchResult(state.sessionId, version, 'bin');
    const session = await api.getSession(state.sessionId);
    state = applySession(state, session);
    statusLine.textContent = `result version ${version} published`;
    redraw();
  } catch (err) {
    if (err instanceof ApiRequestError && err.status === 409) toast('already running');
    else toast(err instanceof Error ? err.message : String(err));
  }
}

function wireControls() {
  el<HTMLInputElement>('file').addEventListener('change', (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void uploadFile(file);
  });
  for (const tool of ['positive', 'negative', 'erase'] as Tool[]) {
    el<HTMLButtonElement>(`tool-${tool}`).addEventListener('click', () => {
      state = { ...state, tool };
      document.querySelectorAll('.tool').forEach((b) => b.classList.remove('active'));
      el(`tool-${tool}`).classList.add('active');
    });
  }
  for (const mode of ['confidence', 'binarized', 'none'] as OverlayMode[]) {
    el<HTMLButtonElement>(`overlay-${mode}`).addEventListener('click', () => {
      state = { ...state, overlayMode: mode };
      redraw(); // client-side toggle, no refetch
    });
  }
  el<HTMLInputElement>('opacity').addEventListener('input', (ev) => {
    state = { ...state, overlayOpacity: Number((ev.target as HTMLInputElement).value) };
    redraw();
  });
  el<HTMLButtonElement>('run').addEventListener('click', () => void runReconstruction());
  markerCanvas.addEventListener('click', (ev) => void handleCanvasClick(ev));
}

wireControls();
