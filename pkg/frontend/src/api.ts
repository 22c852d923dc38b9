/**
 * Typed client for the restoration service. All pipeline math happens on
 * the server; the UI only uploads inputs and renders returned artifacts.
 */

export interface JobView {
  id: string;
  state: "QUEUED" | "RUNNING" | "DONE" | "FAILED";
  progress: number;
  stages: Record<string, string>;
  error: string | null;
}

export interface ApiError {
  code: string;
  message: string;
}

export class ServiceError extends Error {
  code: string;
  status: number;

  constructor(status: number, body: ApiError) {
    super(body.message);
    this.code = body.code;
    this.status = status;
  }
}

async function jsonOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let body: ApiError = { code: "error", message: resp.statusText };
    try {
      body = (await resp.json()) as ApiError;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ServiceError(resp.status, body);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  async uploadImage(blob: Blob): Promise<string> {
    const form = new FormData();
    form.append("file", blob, "upload.png");
    const resp = await fetch(`${this.base}/api/images`, { method: "POST", body: form });
    return (await jsonOrThrow<{ image_id: string }>(resp)).image_id;
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${imageId}`;
  }

  async simulateBrightness(imageId: string, factor: number): Promise<string> {
    const resp = await fetch(`${this.base}/api/brightness`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, factor }),
    });
    return (await jsonOrThrow<{ image_id: string }>(resp)).image_id;
  }

  async uploadMask(blob: Blob): Promise<string> {
    const form = new FormData();
    form.append("file", blob, "mask.png");
    const resp = await fetch(`${this.base}/api/masks`, { method: "PUT", body: form });
    return (await jsonOrThrow<{ mask_id: string }>(resp)).mask_id;
  }

  async randomMask(req: {
    image_id?: string;
    size?: number;
    family: string;
    coverage: number;
    seed: number;
  }): Promise<string> {
    const resp = await fetch(`${this.base}/api/masks/random`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    return (await jsonOrThrow<{ mask_id: string }>(resp)).mask_id;
  }

  async autoMask(imageId: string, lambdaG = 3.0, lambdaP = 2.0): Promise<string> {
    const resp = await fetch(`${this.base}/api/masks/auto`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, lambda_g: lambdaG, lambda_p: lambdaP }),
    });
    return (await jsonOrThrow<{ mask_id: string }>(resp)).mask_id;
  }

  maskUrl(maskId: string): string {
    return `${this.base}/api/masks/${maskId}`;
  }

  async submitRestore(req: {
    image_id: string;
    mask_id?: string;
    auto?: { lambda_g: number; lambda_p: number };
  }): Promise<string> {
    const resp = await fetch(`${this.base}/api/restore`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    return (await jsonOrThrow<{ job_id: string }>(resp)).job_id;
  }

  async getJob(jobId: string): Promise<JobView> {
    const resp = await fetch(`${this.base}/api/jobs/${jobId}`);
    return jsonOrThrow<JobView>(resp);
  }

  stageUrl = (jobId: string, stage: string): string =>
    `${this.base}/api/jobs/${jobId}/stages/${stage}`;
}
