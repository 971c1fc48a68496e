/*
 * ---------------------------------------------------------------------------
 * Shared fixtures for the UI tests: canned service records and a tiny
 * JSON-response builder for the mocked fetch.
 * ---------------------------------------------------------------------------
 */

import type { AnalysisRecord } from "../src/types.js";

export const DISCLAIMER =
    "Research prototype - not a medical device; not for clinical use.";

export function makeRecord(partial: Partial<AnalysisRecord> = {}): AnalysisRecord {
    return {
        request_id: "r1",
        original_filename: "study.png",
        received_at: "2024-05-01T10:00:00+00:00",
        completed_at: "2024-05-01T10:00:01+00:00",
        disclaimer: DISCLAIMER,
        valid: true,
        filter_scores: { valid: 0.98, nonvalid: 0.02 },
        class_scores: { no_finding: 0.1, lung_opacity: 0.2, covid19: 0.7 },
        summary: "covid19",
        pipeline: ["extension_check", "decode", "filter", "classify", "cam"],
        cam_url: "/api/v1/results/r1/cam.png",
        ...partial,
    };
}

export function invalidRecord(partial: Partial<AnalysisRecord> = {}): AnalysisRecord {
    const record = makeRecord({
        valid: false,
        filter_scores: { valid: 0.12, nonvalid: 0.88 },
        summary: "invalid_image",
        pipeline: ["extension_check", "decode", "filter"],
        ...partial,
    });
    delete record.class_scores;
    delete record.cam_url;
    return record;
}

export function jsonResponse(body: unknown, status = 200): Response {
    return new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
    });
}
