import type { JobInfo, Raster, ReconstructOptions, SessionInfo } from './types';
import { parsePgm } from './pgm';

/** Thin client over the reconstruction service's HTTP API. */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let message = `${resp.status}`;
      try {
        const body = await resp.json();
        message = body.message ?? message;
      } catch {
        /* not JSON */
      }
      throw new ApiRequestError(resp.status, message);
    }
    return resp;
  }

  async createSession(filamentPgm: Uint8Array, filename = 'filaments.pgm'): Promise<SessionInfo> {
    const form = new FormData();
    form.append('filament', new Blob([filamentPgm as BlobPart]), filename);
    const resp = await this.request('/api/sessions', { method: 'POST', body: form });
    return resp.json();
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    return (await this.request(`/api/sessions/${sessionId}`)).json();
  }

  async editPoints(
    sessionId: string,
    add: [number, number, number][] = [],
    remove: [number, number][] = [],
  ): Promise<SessionInfo> {
    const resp = await this.request(`/api/sessions/${sessionId}/points`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ add, remove }),
    });
    return resp.json();
  }

  async startReconstruction(sessionId: string, options: ReconstructOptions = {}): Promise<string> {
    const resp = await this.request(`/api/sessions/${sessionId}/reconstruct`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(options),
    });
    const body = await resp.json();
    return body.job_id;
  }

  async getJob(jobId: string): Promise<JobInfo> {
    return (await this.request(`/api/jobs/${jobId}`)).json();
  }

  /**
   * Poll a job at `intervalMs` until it reaches a terminal state.
   * Resolves with the final job info; rejects when the job failed.
   */
  async pollJob(
    jobId: string,
    onProgress?: (job: JobInfo) => void,
    intervalMs = 500,
    maxAttempts = 2400,
  ): Promise<JobInfo> {
    for (let attempt = 0; attempt < maxAttempts; attempt++) {
      const job = await this.getJob(jobId);
      onProgress?.(job);
      if (job.state === 'done') return job;
      if (job.state === 'failed') throw new Error(job.error ?? 'reconstruction failed');
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
    throw new Error('job polling timed out');
  }

  /** Fetch a published result raster ('conf' or 'bin') as decoded values. */
  async fetchResult(sessionId: string, version: number, kind: 'conf' | 'bin'): Promise<Raster> {
    const resp = await this.request(`/api/sessions/${sessionId}/results/${version}.${kind}`);
    return parsePgm(await resp.arrayBuffer());
  }
}

export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}
