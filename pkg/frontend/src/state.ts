/*
 * ---------------------------------------------------------------------------
 * Session state for the triage viewer.
 *
 * One controller owns the whole view model. Uploads run through a queue so
 * that at most one analyze request is in flight; anything submitted while a
 * request is pending waits its turn instead of racing the service.
 * ---------------------------------------------------------------------------
 */

import { analyze, fetchHistory, newRequestId } from "./api.js";
import { noticeKeyForFailure } from "./i18n.js";
import { clampOpacity, DEFAULT_OPACITY } from "./overlay.js";
import type { AnalysisRecord, AnalysisView } from "./types.js";

interface PendingUpload {
    blob: Blob;
    filename: string;
    requestId: string;
}

function initialView(): AnalysisView {
    return {
        state: "idle",
        previewUrl: null,
        record: null,
        noticeKey: null,
        retriable: false,
        history: [],
        overlayOpacity: DEFAULT_OPACITY,
    };
}

function makePreviewUrl(blob: Blob): string | null {
    // jsdom does not implement createObjectURL; in the browser it always exists.
    if (typeof URL !== "undefined" && typeof URL.createObjectURL === "function") {
        return URL.createObjectURL(blob);
    }
    return null;
}

export class SessionController {
    view: AnalysisView;

    private queue: PendingUpload[] = [];
    private draining = false;
    private lastFailed: PendingUpload | null = null;
    private onChange: (view: AnalysisView) => void;

    constructor(onChange: (view: AnalysisView) => void) {
        this.view = initialView();
        this.onChange = onChange;
    }

    /** Queue an image for analysis; requests drain strictly one at a time. */
    submit(blob: Blob, filename: string): void {
        this.queue.push({ blob, filename, requestId: newRequestId() });
        void this.drain();
    }

    /** Re-queue the upload that last failed with a network error. */
    retry(): void {
        if (this.lastFailed === null) return;
        const item = this.lastFailed;
        this.lastFailed = null;
        this.queue.unshift(item);
        void this.drain();
    }

    setOpacity(value: number): void {
        this.emit({ overlayOpacity: clampOpacity(value) });
    }

    /** Install history fetched at startup without touching the rest of the view. */
    seedHistory(records: AnalysisRecord[]): void {
        this.emit({ history: records });
    }

    private emit(patch: Partial<AnalysisView>): void {
        this.view = { ...this.view, ...patch };
        this.onChange(this.view);
    }

    private async drain(): Promise<void> {
        if (this.draining) return;
        this.draining = true;
        try {
            while (this.queue.length > 0) {
                const item = this.queue.shift() as PendingUpload;
                const previewUrl = makePreviewUrl(item.blob);
                this.emit({
                    state: "uploading",
                    previewUrl,
                    record: null,
                    noticeKey: null,
                    retriable: false,
                });
                const outcome = await analyze(item.blob, item.filename, item.requestId);
                if (outcome.ok) {
                    const history = await fetchHistory();
                    this.emit({
                        state: "done",
                        record: outcome.record,
                        noticeKey: null,
                        retriable: false,
                        history: history ?? this.view.history,
                    });
                } else {
                    const retriable = outcome.failure.kind === "network";
                    this.lastFailed = retriable ? item : null;
                    this.emit({
                        state: "error",
                        record: null,
                        noticeKey: noticeKeyForFailure(outcome.failure),
                        retriable,
                    });
                }
            }
        } finally {
            this.draining = false;
        }
    }
}
