/**
 * Response shapes mirrored from the triage service's JSON API. The client
 * renders these verbatim; it never computes or renormalizes a verdict.
 */

export type ClassName = "no_finding" | "lung_opacity" | "covid19";

export const CLASS_ORDER: ClassName[] = ["no_finding", "lung_opacity", "covid19"];

export interface AnalysisRecord {
    request_id: string;
    original_filename: string;
    received_at: string;
    completed_at: string;
    disclaimer: string;
    valid: boolean;
    filter_scores: { valid: number; nonvalid: number };
    /** Absent when the validity gate rejected the upload. */
    class_scores?: Record<ClassName, number>;
    /** A class name, or "invalid_image" for rejected uploads. */
    summary: string;
    pipeline: string[];
    /** Absent when no activation map was rendered. */
    cam_url?: string;
}

export interface ExampleEntry {
    id: string;
    label: string;
    url: string;
}

/** Machine-readable error body the service sends with 4xx/5xx statuses. */
export interface ServiceError {
    code: string;
    message: string;
}

export type AnalyzeFailure =
    | { kind: "http"; status: number; code: string; message: string }
    | { kind: "network"; message: string };

export type AnalyzeOutcome =
    | { ok: true; record: AnalysisRecord }
    | { ok: false; failure: AnalyzeFailure };

export type RequestState = "idle" | "uploading" | "done" | "error";

/** Everything the page needs to draw one moment of the session. */
export interface AnalysisView {
    state: RequestState;
    /** Local object URL of the picked file, shown immediately on drop. */
    previewUrl: string | null;
    record: AnalysisRecord | null;
    /** i18n key describing the failure; null unless state is "error". */
    noticeKey: string | null;
    /** True when resubmitting the same upload could succeed (network drop). */
    retriable: boolean;
    history: AnalysisRecord[];
    overlayOpacity: number;
}
