/**
 * String table with English defaults. Every user-facing string goes through
 * t() so a second language is a second table, not a code change.
 */

import type { AnalyzeFailure } from "./types.js";

const EN: Record<string, string> = {
    app_title: "Chest X-ray Triage",
    drop_hint: "Drag and drop a chest X-ray here, or click to browse",
    uploading: "Analyzing…",
    retry: "Retry",

    summary_no_finding: "No finding",
    summary_lung_opacity: "Lung opacity characteristics",
    summary_covid19: "COVID-19 characteristics",
    summary_invalid_image: "Not a valid frontal chest radiography",

    notice_not_an_image: "This file is not a valid image.",
    notice_payload_too_large: "The file is too large for the service.",
    notice_bad_request_id: "The request identifier was rejected.",
    notice_network: "The service could not be reached.",
    notice_server: "The service reported an internal error.",

    scores_title: "Class scores",
    filter_title: "Validity gate",
    history_title: "Recent analyses",
    history_empty: "No analyses yet.",
    examples_title: "Examples",
    overlay_title: "Activation map",
    opacity_label: "Overlay opacity",
    cam_missing: "The activation map could not be loaded.",
    cam_retry: "Reload map",

    projector_title: "Embedding projector export",
    projector_hint:
        "Download the exported embedding tables for an external 3-D projector.",
    projector_vectors: "vectors.tsv",
    projector_metadata: "metadata.tsv",

    disclaimer:
        "Research prototype - not a medical device; not for clinical use.",
};

const TABLES: Record<string, Record<string, string>> = { en: EN };

let activeLanguage = "en";

export function setLanguage(lang: string): void {
    activeLanguage = lang in TABLES ? lang : "en";
}

export function t(key: string): string {
    const table = TABLES[activeLanguage] ?? EN;
    return table[key] ?? EN[key] ?? key;
}

/** i18n key for a service summary value ("covid19", "invalid_image", ...). */
export function summaryKey(summary: string): string {
    return `summary_${summary}`;
}

/** i18n key for a machine-readable service error code. */
export function noticeKeyForCode(code: string): string {
    const known = `notice_${code}`;
    return known in EN ? known : "notice_server";
}

export function noticeKeyForFailure(failure: AnalyzeFailure): string {
    if (failure.kind === "network") return "notice_network";
    return noticeKeyForCode(failure.code);
}
