/**
 * Job polling with retry and exponential backoff.
 *
 * Network failures back off up to a ceiling and never abort the poll;
 * updates fire only when the observed (state, progress) pair changes, so a
 * flaky connection cannot cause duplicate renders.
 */

import type { JobView } from "./api";

export interface PollOptions {
  intervalMs?: number;
  backoffFactor?: number;
  maxIntervalMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function pollJob(
  fetchJob: (jobId: string) => Promise<JobView>,
  jobId: string,
  onUpdate: (job: JobView) => void,
  options: PollOptions = {},
): Promise<JobView> {
  const base = options.intervalMs ?? 500;
  const factor = options.backoffFactor ?? 2;
  const ceiling = options.maxIntervalMs ?? 8000;
  const sleep = options.sleep ?? defaultSleep;
  let interval = base;
  let lastKey = "";
  for (;;) {
    let job: JobView;
    try {
      job = await fetchJob(jobId);
    } catch {
      interval = Math.min(interval * factor, ceiling);
      await sleep(interval);
      continue;
    }
    interval = base;
    const key = `${job.state}:${job.progress}`;
    if (key !== lastKey) {
      lastKey = key;
      onUpdate(job);
    }
    if (job.state === "DONE" || job.state === "FAILED") {
      return job;
    }
    await sleep(interval);
  }
}
