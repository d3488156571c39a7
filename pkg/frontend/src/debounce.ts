import type { AllocationDraft, ScenarioResultPayload } from "./types.js";

export interface EvaluatorCallbacks {
  onResult: (result: ScenarioResultPayload) => void;
  onError: (error: unknown) => void;
}

export interface DebouncedEvaluator {
  schedule(draft: AllocationDraft): void;
  /** Resolve once nothing is pending or in flight (test helper). */
  settled(): Promise<void>;
  dispose(): void;
}

/**
 * Debounced, latest-wins scenario evaluation.
 *
 * Edits within the debounce window collapse into one request; a newer
 * request aborts the in-flight one, so at most one request is ever
 * outstanding and only the latest result reaches the UI.
 */
export function createEvaluator(
  run: (draft: AllocationDraft, signal: AbortSignal) => Promise<ScenarioResultPayload>,
  callbacks: EvaluatorCallbacks,
  delayMs = 300,
): DebouncedEvaluator {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let controller: AbortController | null = null;
  let generation = 0;
  let inflight: Promise<void> | null = null;

  function fire(draft: AllocationDraft): void {
    controller?.abort();
    controller = new AbortController();
    const mine = ++generation;
    const signal = controller.signal;
    inflight = run(draft, signal)
      .then((result) => {
        if (mine === generation) callbacks.onResult(result);
      })
      .catch((error) => {
        if (mine === generation && !signal.aborted) callbacks.onError(error);
      })
      .finally(() => {
        if (mine === generation) inflight = null;
      });
  }

  return {
    schedule(draft: AllocationDraft): void {
      if (timer !== null) clearTimeout(timer);
      timer = setTimeout(() => {
        timer = null;
        fire(draft);
      }, delayMs);
    },
    async settled(): Promise<void> {
      while (timer !== null || inflight !== null) {
        if (inflight) await inflight;
        else await new Promise((resolve) => setTimeout(resolve, delayMs + 10));
      }
    },
    dispose(): void {
      if (timer !== null) clearTimeout(timer);
      controller?.abort();
      generation++;
    },
  };
}
