import type { InfusionRecord, PatientStatus } from "./api.js";

export interface SeriesPoint {
  elapsed_s: number;
  delivered_ml: number;
}

/**
 * View model fed only by API responses. Poll responses can arrive out of
 * order; last-write-wins keyed on the monotone prescription version.
 */
export class DashboardState {
  status: PatientStatus | null = null;
  history: InfusionRecord[] = [];
  version = 0;
  series: SeriesPoint[] = [];
  private decisionsInFlight = new Set<string>();

  applyStatus(next: PatientStatus): boolean {
    const incoming = next.active_prescription ? next.active_prescription.version : 0;
    if (incoming < this.version) {
      return false;
    }
    this.version = incoming;
    this.status = next;
    const progress = next.progress;
    if (progress && typeof progress.elapsed_s === "number"
        && typeof progress.delivered_volume_ml === "number") {
      const last = this.series[this.series.length - 1];
      if (last !== undefined && progress.elapsed_s < last.elapsed_s) {
        this.series = []; // elapsed went backwards: a new infusion run started
      }
      const tail = this.series[this.series.length - 1];
      if (tail === undefined || progress.elapsed_s > tail.elapsed_s) {
        this.series.push({
          elapsed_s: progress.elapsed_s,
          delivered_ml: progress.delivered_volume_ml,
        });
      }
    }
    return true;
  }

  applyHistory(records: InfusionRecord[]): void {
    this.history = records;
  }

  /** False when a decision for this proposal is already on the wire. */
  beginDecision(proposalId: string): boolean {
    if (this.decisionsInFlight.has(proposalId)) {
      return false;
    }
    this.decisionsInFlight.add(proposalId);
    return true;
  }

  endDecision(proposalId: string): void {
    this.decisionsInFlight.delete(proposalId);
  }

  decisionPending(proposalId: string): boolean {
    return this.decisionsInFlight.has(proposalId);
  }

  reset(): void {
    this.status = null;
    this.history = [];
    this.version = 0;
    this.series = [];
    this.decisionsInFlight.clear();
  }
}
