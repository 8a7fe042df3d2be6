/**
 * Typed client for the emoface service API. Every HTTP call the UI makes
 * goes through this wrapper, so the contract lives in exactly one place.
 */

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobRecord {
  job_id: string;
  state: JobState;
  emotion: string;
  created_at: number;
  started_at: number | null;
  finished_at: number | null;
  error: string | null;
  latency_s: number | null;
  result_url: string | null;
}

export interface SubmitResponse {
  job_id: string;
  state: JobState;
}

export interface HealthResponse {
  status: string;
  checkpoint: string;
  queue_depth: number;
  jobs: Record<string, number>;
}

export interface JobSubmission {
  video: Blob;
  videoName: string;
  audio: Blob;
  audioName: string;
  emotion: string;
  fps?: number;
  sampleRate?: number;
}

/** Server-side rejection; `detail` is the server's message, verbatim. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(path, init);
  if (!response.ok) {
    let detail = `${response.status} ${response.statusText}`;
    try {
      const body = await response.json();
      if (typeof body?.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  readonly baseUrl: string;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  getHealth(): Promise<HealthResponse> {
    return request<HealthResponse>(`${this.baseUrl}/api/health`);
  }

  async getEmotions(): Promise<string[]> {
    const body = await request<{ emotions: string[] }>(`${this.baseUrl}/api/emotions`);
    return body.emotions;
  }

  submitJob(submission: JobSubmission): Promise<SubmitResponse> {
    const form = new FormData();
    form.append("video", submission.video, submission.videoName);
    form.append("audio", submission.audio, submission.audioName);
    form.append("emotion", submission.emotion);
    if (submission.fps !== undefined) form.append("fps", String(submission.fps));
    if (submission.sampleRate !== undefined) {
      form.append("sample_rate", String(submission.sampleRate));
    }
    return request<SubmitResponse>(`${this.baseUrl}/api/jobs`, {
      method: "POST",
      body: form,
    });
  }

  getJob(jobId: string): Promise<JobRecord> {
    return request<JobRecord>(`${this.baseUrl}/api/jobs/${jobId}`);
  }

  /** URL for the finished video; the <video> element streams it directly. */
  resultUrl(jobId: string): string {
    return `${this.baseUrl}/api/jobs/${jobId}/result`;
  }
}
