import { afterEach, describe, expect, it, vi } from "vitest";
import { ApiClient, ApiError } from "../src/api";

function jsonResponse(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function loginPayload(token: string) {
  return {
    first_name: "Pat", last_name: "Smith", institute: "General", token,
  };
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("token rotation", () => {
  it("sends the rotated token on the next request", async () => {
    const calls: Array<{ url: string; init: RequestInit }> = [];
    const replies = [
      jsonResponse(200, loginPayload("tok-1")),
      jsonResponse(200, { status: statusPayload(), token: "tok-2" }),
      jsonResponse(200, { history: [], token: "tok-3" }),
    ];
    vi.stubGlobal("fetch", vi.fn(async (url: string, init: RequestInit) => {
      calls.push({ url, init });
      return replies.shift()!;
    }));

    const client = new ApiClient("http://x");
    await client.login("physician1", "pw");
    expect(client.authenticated).toBe(true);
    await client.status("pat-001");
    await client.history("pat-001");

    expect(headerOf(calls[0])).toBeUndefined(); // login carries no bearer
    expect(headerOf(calls[1])).toBe("Bearer tok-1");
    expect(headerOf(calls[2])).toBe("Bearer tok-2");
  });

  it("drops the token when an error response does not reissue one", async () => {
    const replies = [
      jsonResponse(200, loginPayload("tok-1")),
      jsonResponse(409, { error: "already_decided" }),
    ];
    vi.stubGlobal("fetch", vi.fn(async () => replies.shift()!));

    const client = new ApiClient("http://x");
    await client.login("physician1", "pw");
    await expect(client.decide("prop-1", "approve")).rejects.toMatchObject({
      name: "ApiError", status: 409, code: "already_decided",
    });
    expect(client.authenticated).toBe(false);
  });

  it("keeps the token across a network failure (the server never saw it)", async () => {
    const replies = [jsonResponse(200, loginPayload("tok-1"))];
    const fetchMock = vi.fn(async () => {
      const reply = replies.shift();
      if (reply === undefined) {
        throw new TypeError("fetch failed");
      }
      return reply;
    });
    vi.stubGlobal("fetch", fetchMock);

    const client = new ApiClient("http://x");
    await client.login("physician1", "pw");
    await expect(client.status("pat-001")).rejects.toThrow(TypeError);
    expect(client.authenticated).toBe(true);
  });
});

describe("error mapping", () => {
  it("raises ApiError with the server's error code", async () => {
    vi.stubGlobal("fetch", vi.fn(async () =>
      jsonResponse(401, { error: "invalid_credentials" })));
    const client = new ApiClient("http://x");
    try {
      await client.login("ghost", "pw");
      expect.unreachable("login should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(401);
      expect((err as ApiError).code).toBe("invalid_credentials");
    }
  });
});

describe("request serialization", () => {
  it("never puts two requests on the wire at once", async () => {
    let release: (value: Response) => void = () => undefined;
    const gate = new Promise<Response>((resolve) => { release = resolve; });
    const fetchMock = vi.fn()
      .mockImplementationOnce(async () => jsonResponse(200, loginPayload("tok-1")))
      .mockImplementationOnce(() => gate)
      .mockImplementationOnce(async () => jsonResponse(200, { history: [], token: "tok-3" }));
    vi.stubGlobal("fetch", fetchMock);

    const client = new ApiClient("http://x");
    await client.login("physician1", "pw");

    const first = client.status("pat-001");
    const second = client.history("pat-001");
    await Promise.resolve();
    // the second request must wait for the first response and its token
    expect(fetchMock).toHaveBeenCalledTimes(2);
    release(jsonResponse(200, { status: statusPayload(), token: "tok-2" }));
    await first;
    await second;
    expect(fetchMock).toHaveBeenCalledTimes(3);
    const lastInit = fetchMock.mock.calls[2][1] as RequestInit;
    expect((lastInit.headers as Record<string, string>)["Authorization"])
      .toBe("Bearer tok-2");
  });

  it("continues the queue after a failed call", async () => {
    const replies = [
      jsonResponse(200, loginPayload("tok-1")),
      jsonResponse(404, { error: "unknown_patient" }),
      jsonResponse(200, loginPayload("tok-2")),
    ];
    vi.stubGlobal("fetch", vi.fn(async () => replies.shift()!));
    const client = new ApiClient("http://x");
    await client.login("physician1", "pw");
    await expect(client.status("pat-x")).rejects.toBeInstanceOf(ApiError);
    await client.login("physician1", "pw");
    expect(client.authenticated).toBe(true);
  });
});

function statusPayload() {
  return {
    patient_id: "pat-001",
    limits: { max_volume_ml: 10, max_rate_ml_h: 10 },
    active_prescription: null,
    pending_proposals: [],
    progress: null,
  };
}

function headerOf(call: { init: RequestInit }): string | undefined {
  return (call.init.headers as Record<string, string>)["Authorization"];
}
