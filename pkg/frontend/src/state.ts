import type { AllocationDraft } from "./types.js";

const STORAGE_KEY = "carbonform.allocation-draft.v1";

type StorageLike = Pick<Storage, "getItem" | "setItem" | "removeItem">;

export function totalUnits(draft: AllocationDraft): number {
  return Object.values(draft).reduce((sum, u) => sum + u, 0);
}

/**
 * Validation message for a raw units input, or null when acceptable.
 * Units must be non-negative integers (the server schema rejects the rest).
 */
export function unitsError(raw: string): string | null {
  const trimmed = raw.trim();
  if (trimmed === "") return "enter a number of units";
  const value = Number(trimmed);
  if (!Number.isFinite(value)) return "units must be a number";
  if (!Number.isInteger(value)) return "units must be a whole number";
  if (value < 0) return "units must be non-negative";
  return null;
}

/** New draft with the neighborhood set to `units`; zero entries are dropped. */
export function setUnits(draft: AllocationDraft, id: string, units: number): AllocationDraft {
  if (!Number.isInteger(units) || units < 0) {
    throw new Error(`invalid units ${units}`);
  }
  const next: AllocationDraft = { ...draft };
  if (units === 0) {
    delete next[id];
  } else {
    next[id] = units;
  }
  return next;
}

export function saveDraft(draft: AllocationDraft, storage: StorageLike): void {
  storage.setItem(STORAGE_KEY, JSON.stringify(draft));
}

export function loadDraft(storage: StorageLike): AllocationDraft {
  const raw = storage.getItem(STORAGE_KEY);
  if (!raw) return {};
  try {
    const parsed = JSON.parse(raw) as Record<string, unknown>;
    const draft: AllocationDraft = {};
    for (const [id, units] of Object.entries(parsed)) {
      if (typeof units === "number" && Number.isInteger(units) && units > 0) {
        draft[id] = units;
      }
    }
    return draft;
  } catch {
    return {};
  }
}

export function clearDraft(storage: StorageLike): void {
  storage.removeItem(STORAGE_KEY);
}
