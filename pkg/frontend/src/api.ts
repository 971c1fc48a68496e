/**
 * Thin typed client for the triage service. All knowledge of routes and
 * payload shapes lives here; the rest of the UI deals in AnalysisRecord.
 */

import type {
    AnalysisRecord,
    AnalyzeOutcome,
    ExampleEntry,
    ServiceError,
} from "./types.js";

/** Same-origin by default; tests and static hosting can point it elsewhere. */
let apiBase = "";

export function setApiBase(base: string): void {
    apiBase = base.replace(/\/$/, "");
}

export function apiUrl(path: string): string {
    return `${apiBase}${path}`;
}

export function newRequestId(): string {
    if (typeof crypto !== "undefined" && "randomUUID" in crypto) {
        return crypto.randomUUID();
    }
    return `req-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

async function errorBody(response: Response): Promise<ServiceError> {
    try {
        const body = (await response.json()) as Partial<ServiceError>;
        return {
            code: body.code ?? "server_error",
            message: body.message ?? response.statusText,
        };
    } catch {
        return { code: "server_error", message: response.statusText };
    }
}

/**
 * POST the file to /api/v1/analyze. The caller supplies the request id so a
 * retry of a dropped connection stays idempotent on the service side.
 */
export async function analyze(
    file: Blob,
    filename: string,
    requestId: string,
): Promise<AnalyzeOutcome> {
    const form = new FormData();
    form.append("image", file, filename);
    form.append("request_id", requestId);
    let response: Response;
    try {
        response = await fetch(apiUrl("/api/v1/analyze"), {
            method: "POST",
            body: form,
        });
    } catch (err) {
        return {
            ok: false,
            failure: { kind: "network", message: err instanceof Error ? err.message : String(err) },
        };
    }
    if (!response.ok) {
        const body = await errorBody(response);
        return {
            ok: false,
            failure: {
                kind: "http",
                status: response.status,
                code: body.code,
                message: body.message,
            },
        };
    }
    return { ok: true, record: (await response.json()) as AnalysisRecord };
}

/** Newest-first records, exactly as the service orders them. */
export async function fetchHistory(limit = 8): Promise<AnalysisRecord[] | null> {
    try {
        const response = await fetch(apiUrl(`/api/v1/history?limit=${limit}`));
        if (!response.ok) return null;
        return (await response.json()) as AnalysisRecord[];
    } catch {
        return null;
    }
}

/** The example gallery manifest; null hides the section. */
export async function fetchExamples(): Promise<ExampleEntry[] | null> {
    try {
        const response = await fetch(apiUrl("/api/v1/examples"));
        if (!response.ok) return null;
        const body = (await response.json()) as { examples?: ExampleEntry[] };
        return body.examples ?? null;
    } catch {
        return null;
    }
}

/** Fetch an example image and hand it back as an uploadable blob. */
export async function fetchExampleBlob(url: string): Promise<Blob | null> {
    try {
        const response = await fetch(apiUrl(url));
        if (!response.ok) return null;
        return await response.blob();
    } catch {
        return null;
    }
}
