import { ApiClient, ApiError } from "./api.js";
import type { PatientStatus, Proposal } from "./api.js";
import { polylinePoints } from "./chart.js";
import { DashboardState } from "./state.js";
import { checkLimitPayload, parseFormNumber } from "./validation.js";

const POLL_MS = 2000;
const CHART_BOX = { width: 640, height: 220, pad: 28 };

const client = new ApiClient("");
const state = new DashboardState();

let patientId = "";
let physicianName = "";
// kept for this tab's lifetime only: lets the view refresh after an
// application-level error consumed the token chain (one-time tokens are
// not reissued on error responses). A 401 still forces the login screen.
let credentials: { username: string; password: string } | null = null;
let pollInFlight = false;
let pollTimer: number | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error("missing element #" + id);
  }
  return node as T;
}

function show(id: string, visible: boolean): void {
  el(id).classList.toggle("hidden", !visible);
}

function setText(id: string, text: string): void {
  el(id).textContent = text;
}

// ---------------------------------------------------------------------------
// session
// ---------------------------------------------------------------------------

function toLogin(notice: string): void {
  if (pollTimer !== null) {
    window.clearInterval(pollTimer);
    pollTimer = null;
  }
  client.logout();
  credentials = null;
  state.reset();
  renderAll();
  setText("login-notice", notice);
  show("main-view", false);
  show("login-view", true);
}

async function recoverSession(notice: string): Promise<void> {
  setText("notice", notice);
  show("notice", notice !== "");
  if (credentials === null) {
    toLogin(notice);
    return;
  }
  try {
    await client.login(credentials.username, credentials.password);
    await pollTick();
  } catch (err) {
    toLogin(notice + " (session could not be restored)");
  }
}

function describeApiError(err: ApiError): string {
  switch (err.code) {
    case "token_expired": return "Session expired, please log in again.";
    case "token_reused":
    case "token_invalid": return "Session is no longer valid, please log in again.";
    case "already_decided": return "Proposal was already decided elsewhere.";
    case "limit_exceeded": return "Rejected: proposal exceeds the limits now in force.";
    case "invalid_credentials": return "Unknown user or wrong password.";
    case "forbidden_patient": return "You are not assigned to this patient.";
    case "unknown_patient": return "No such patient.";
    default: return "Request failed: " + err.code;
  }
}

// ---------------------------------------------------------------------------
// polling
// ---------------------------------------------------------------------------

async function pollTick(): Promise<void> {
  if (pollInFlight || !client.authenticated) {
    return;
  }
  pollInFlight = true;
  try {
    const status = await client.status(patientId);
    const history = await client.history(patientId);
    state.applyStatus(status);
    state.applyHistory(history);
    show("stale-banner", false);
    renderAll();
  } catch (err) {
    if (err instanceof ApiError) {
      if (err.status === 401) {
        toLogin(describeApiError(err));
      } else {
        await recoverSession(describeApiError(err));
      }
    } else {
      // transport hiccup: keep showing the last known data, flagged stale
      show("stale-banner", true);
    }
  } finally {
    pollInFlight = false;
  }
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

function renderStatus(status: PatientStatus | null): void {
  if (status === null) {
    setText("limits-line", "");
    setText("rx-line", "");
    setText("progress-line", "");
    return;
  }
  setText("limits-line",
    `max volume ${status.limits.max_volume_ml} ml, max rate ${status.limits.max_rate_ml_h} ml/h`);
  const rx = status.active_prescription;
  if (rx === null) {
    setText("rx-line", "idle: no active prescription");
  } else {
    setText("rx-line",
      `version ${rx.version}: ${rx.volume_ml} ml at ${rx.rate_ml_h} ml/h`);
  }
  const progress = status.progress;
  if (progress === null) {
    setText("progress-line", "no live infusion data");
  } else {
    setText("progress-line",
      `delivered ${progress.delivered_volume_ml.toFixed(3)} ml in ${Math.round(progress.elapsed_s)} s`);
  }
}

function renderChart(): void {
  const target = state.status?.active_prescription?.volume_ml ?? 0;
  const line = el<HTMLElement>("chart-line");
  line.setAttribute("points", polylinePoints(state.series, target, CHART_BOX));
}

function proposalRow(proposal: Proposal): HTMLLIElement {
  const item = document.createElement("li");
  const label = document.createElement("span");
  label.textContent = `${proposal.volume_ml} ml at ${proposal.rate_ml_h} ml/h`;
  item.appendChild(label);
  for (const decision of ["approve", "reject"] as const) {
    const button = document.createElement("button");
    button.textContent = decision;
    button.disabled = state.decisionPending(proposal.proposal_id);
    button.addEventListener("click", () => {
      void decide(proposal.proposal_id, decision);
    });
    item.appendChild(button);
  }
  return item;
}

function renderProposals(): void {
  const list = el<HTMLUListElement>("proposals");
  list.replaceChildren();
  const pending = state.status?.pending_proposals ?? [];
  for (const proposal of pending) {
    list.appendChild(proposalRow(proposal));
  }
  show("no-proposals", pending.length === 0);
}

function renderHistory(): void {
  const body = el<HTMLTableSectionElement>("history-body");
  body.replaceChildren();
  for (const record of state.history) {
    const row = document.createElement("tr");
    const cells = [
      record.prescription_id,
      String(record.version),
      record.delivered_volume_ml.toFixed(3),
      record.mean_rate_ml_h.toFixed(2),
      record.outcome,
    ];
    for (const text of cells) {
      const cell = document.createElement("td");
      cell.textContent = text;
      row.appendChild(cell);
    }
    body.appendChild(row);
  }
}

function renderAll(): void {
  setText("who", physicianName ? `${physicianName} / ${patientId}` : "");
  renderStatus(state.status);
  renderChart();
  renderProposals();
  renderHistory();
}

// ---------------------------------------------------------------------------
// actions
// ---------------------------------------------------------------------------

async function decide(proposalId: string, decision: "approve" | "reject"): Promise<void> {
  if (!state.beginDecision(proposalId)) {
    return; // a click for this proposal is already on the wire
  }
  renderProposals();
  try {
    const outcome = await client.decide(proposalId, decision);
    if (outcome.prescription) {
      setText("notice", `version ${outcome.prescription.version} active`);
    } else {
      setText("notice", "proposal rejected");
    }
    show("notice", true);
    await pollTick();
  } catch (err) {
    if (err instanceof ApiError && err.status === 401) {
      toLogin(describeApiError(err));
    } else if (err instanceof ApiError) {
      await recoverSession(describeApiError(err));
    } else {
      show("stale-banner", true);
    }
  } finally {
    state.endDecision(proposalId);
    renderProposals();
  }
}

async function submitLimits(event: Event): Promise<void> {
  event.preventDefault();
  const volume = parseFormNumber(el<HTMLInputElement>("limit-volume").value);
  const rate = parseFormNumber(el<HTMLInputElement>("limit-rate").value);
  const verdict = checkLimitPayload({ max_volume_ml: volume, max_rate_ml_h: rate });
  if (!verdict.ok) {
    setText("limits-error", `${verdict.field}: enter a positive number (0.001 or more)`);
    show("limits-error", true);
    return; // invalid input never reaches the wire
  }
  show("limits-error", false);
  try {
    const saved = await client.setLimits(patientId, volume as number, rate as number);
    setText("notice", `limits saved: ${saved.max_volume_ml} ml, ${saved.max_rate_ml_h} ml/h`);
    show("notice", true);
    show("warning-banner", saved.warning === "below_active_prescription");
    await pollTick();
  } catch (err) {
    if (err instanceof ApiError && err.status === 401) {
      toLogin(describeApiError(err));
    } else if (err instanceof ApiError) {
      await recoverSession(describeApiError(err));
    } else {
      show("stale-banner", true);
    }
  }
}

async function submitLogin(event: Event): Promise<void> {
  event.preventDefault();
  const username = el<HTMLInputElement>("login-username").value.trim();
  const password = el<HTMLInputElement>("login-password").value;
  patientId = el<HTMLInputElement>("login-patient").value.trim();
  try {
    const physician = await client.login(username, password);
    physicianName = `${physician.first_name} ${physician.last_name} (${physician.institute})`;
    credentials = { username, password };
    setText("login-notice", "");
    setText("notice", "");
    show("notice", false);
    show("login-view", false);
    show("main-view", true);
    if (pollTimer === null) {
      pollTimer = window.setInterval(() => { void pollTick(); }, POLL_MS);
    }
    await pollTick();
  } catch (err) {
    if (err instanceof ApiError) {
      setText("login-notice", describeApiError(err));
    } else {
      setText("login-notice", "Server unreachable.");
    }
  }
}

export function boot(): void {
  el<HTMLFormElement>("login-form").addEventListener("submit", (event) => {
    void submitLogin(event);
  });
  el<HTMLFormElement>("limits-form").addEventListener("submit", (event) => {
    void submitLimits(event);
  });
  el<HTMLButtonElement>("logout").addEventListener("click", () => {
    toLogin("");
  });
}

boot();
