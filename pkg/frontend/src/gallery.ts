/**
 * Staged result gallery: the five restoration stages in processing order,
 * with an optional mask overlay entry when the job produced one.
 */

import type { JobView } from "./api";

export const STAGE_ORDER = ["enhanced", "coarse", "local", "global", "final"] as const;

export interface GalleryItem {
  stage: string;
  url: string;
}

export interface GalleryView {
  items: GalleryItem[];
  maskUrl: string | null;
  error: string | null;
}

export function buildGallery(job: JobView, stageUrl: (jobId: string, stage: string) => string): GalleryView {
  if (job.state === "FAILED") {
    return { items: [], maskUrl: null, error: job.error ?? "restoration failed" };
  }
  if (job.state !== "DONE") {
    return { items: [], maskUrl: null, error: null };
  }
  const items = STAGE_ORDER.filter((stage) => stage in job.stages).map((stage) => ({
    stage,
    url: stageUrl(job.id, stage),
  }));
  const maskUrl = "mask" in job.stages ? stageUrl(job.id, "mask") : null;
  return { items, maskUrl, error: null };
}
