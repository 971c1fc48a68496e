/**
 * DOM construction and rendering. The page skeleton is built here so tests
 * exercise exactly the markup production uses, and every renderer is a plain
 * function from data to elements - verdicts come verbatim from the API.
 */

import { summaryKey, t } from "./i18n.js";
import { applyOpacity, DEFAULT_OPACITY } from "./overlay.js";
import type { AnalysisRecord, AnalysisView, ExampleEntry } from "./types.js";
import { CLASS_ORDER } from "./types.js";

export interface Page {
    root: HTMLElement;
    dropzone: HTMLElement;
    fileInput: HTMLInputElement;
    statusLine: HTMLElement;
    preview: HTMLImageElement;
    resultSection: HTMLElement;
    summaryEl: HTMLElement;
    noticeEl: HTMLElement;
    retryButton: HTMLButtonElement;
    filterBars: HTMLElement;
    scoreBars: HTMLElement;
    overlaySection: HTMLElement;
    overlayBase: HTMLImageElement;
    overlayHeat: HTMLImageElement;
    camFallback: HTMLElement;
    camRetryButton: HTMLButtonElement;
    opacitySlider: HTMLInputElement;
    opacityValue: HTMLElement;
    historySection: HTMLElement;
    historyList: HTMLElement;
    examplesSection: HTMLElement;
    examplesGrid: HTMLElement;
    projectorSection: HTMLElement;
    disclaimerBanner: HTMLElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className?: string,
    text?: string,
): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

/** Build the whole page inside `root` and hand back the live elements. */
export function mountSkeleton(root: HTMLElement): Page {
    root.innerHTML = "";

    const header = el("header");
    header.appendChild(el("h1", "app-title", t("app_title")));
    root.appendChild(header);

    const dropzone = el("section", "dropzone");
    dropzone.id = "dropzone";
    dropzone.appendChild(el("p", "drop-hint", t("drop_hint")));
    const fileInput = el("input") as HTMLInputElement;
    fileInput.type = "file";
    fileInput.accept = "image/png,image/jpeg";
    fileInput.id = "file-input";
    dropzone.appendChild(fileInput);
    root.appendChild(dropzone);

    const statusLine = el("p", "status-line");
    statusLine.id = "status-line";
    statusLine.hidden = true;
    root.appendChild(statusLine);

    const resultSection = el("section", "result");
    resultSection.id = "result";
    resultSection.hidden = true;

    const preview = el("img", "preview") as HTMLImageElement;
    preview.id = "preview";
    preview.alt = "uploaded study";
    resultSection.appendChild(preview);

    const summaryEl = el("p", "summary");
    summaryEl.id = "summary";
    resultSection.appendChild(summaryEl);

    const noticeEl = el("p", "notice");
    noticeEl.id = "notice";
    noticeEl.hidden = true;
    resultSection.appendChild(noticeEl);

    const retryButton = el("button", "retry", t("retry")) as HTMLButtonElement;
    retryButton.id = "retry";
    retryButton.hidden = true;
    resultSection.appendChild(retryButton);

    const filterTitle = el("h2", "bars-title", t("filter_title"));
    resultSection.appendChild(filterTitle);
    const filterBars = el("div", "bars");
    filterBars.id = "filter-bars";
    resultSection.appendChild(filterBars);

    const scoresTitle = el("h2", "bars-title", t("scores_title"));
    resultSection.appendChild(scoresTitle);
    const scoreBars = el("div", "bars");
    scoreBars.id = "score-bars";
    resultSection.appendChild(scoreBars);

    const overlaySection = el("section", "overlay");
    overlaySection.id = "overlay";
    overlaySection.hidden = true;
    overlaySection.appendChild(el("h2", undefined, t("overlay_title")));
    const stack = el("div", "overlay-stack");
    const overlayBase = el("img", "overlay-base") as HTMLImageElement;
    overlayBase.id = "overlay-base";
    overlayBase.alt = "uploaded study";
    const overlayHeat = el("img", "overlay-heat") as HTMLImageElement;
    overlayHeat.id = "overlay-heat";
    overlayHeat.alt = "activation map overlay";
    overlayHeat.style.opacity = String(DEFAULT_OPACITY);
    stack.appendChild(overlayBase);
    stack.appendChild(overlayHeat);
    overlaySection.appendChild(stack);

    const camFallback = el("div", "cam-fallback");
    camFallback.id = "cam-fallback";
    camFallback.hidden = true;
    camFallback.appendChild(el("p", undefined, t("cam_missing")));
    const camRetryButton = el("button", undefined, t("cam_retry")) as HTMLButtonElement;
    camRetryButton.id = "cam-retry";
    camFallback.appendChild(camRetryButton);
    overlaySection.appendChild(camFallback);

    const sliderRow = el("label", "opacity-row");
    sliderRow.appendChild(el("span", undefined, t("opacity_label")));
    const opacitySlider = el("input") as HTMLInputElement;
    opacitySlider.type = "range";
    opacitySlider.min = "0";
    opacitySlider.max = "1";
    opacitySlider.step = "0.01";
    opacitySlider.value = String(DEFAULT_OPACITY);
    opacitySlider.id = "opacity-slider";
    sliderRow.appendChild(opacitySlider);
    const opacityValue = el("span", "opacity-value", DEFAULT_OPACITY.toFixed(2));
    opacityValue.id = "opacity-value";
    sliderRow.appendChild(opacityValue);
    overlaySection.appendChild(sliderRow);
    resultSection.appendChild(overlaySection);

    root.appendChild(resultSection);

    const historySection = el("section", "history");
    historySection.id = "history";
    historySection.appendChild(el("h2", undefined, t("history_title")));
    const historyList = el("ul", "history-list");
    historyList.id = "history-list";
    historySection.appendChild(historyList);
    root.appendChild(historySection);

    const examplesSection = el("section", "examples");
    examplesSection.id = "examples";
    examplesSection.hidden = true;
    examplesSection.appendChild(el("h2", undefined, t("examples_title")));
    const examplesGrid = el("div", "examples-grid");
    examplesGrid.id = "examples-grid";
    examplesSection.appendChild(examplesGrid);
    root.appendChild(examplesSection);

    const projectorSection = el("section", "projector");
    projectorSection.id = "projector";
    projectorSection.appendChild(el("h2", undefined, t("projector_title")));
    projectorSection.appendChild(el("p", undefined, t("projector_hint")));
    for (const name of ["projector_vectors", "projector_metadata"] as const) {
        const link = el("a", "projector-link", t(name)) as HTMLAnchorElement;
        link.href = `projector/${t(name)}`;
        link.setAttribute("download", "");
        projectorSection.appendChild(link);
    }
    root.appendChild(projectorSection);

    const disclaimerBanner = el("footer", "disclaimer", t("disclaimer"));
    disclaimerBanner.id = "disclaimer";
    root.appendChild(disclaimerBanner);

    return {
        root,
        dropzone,
        fileInput,
        statusLine,
        preview,
        resultSection,
        summaryEl,
        noticeEl,
        retryButton,
        filterBars,
        scoreBars,
        overlaySection,
        overlayBase,
        overlayHeat,
        camFallback,
        camRetryButton,
        opacitySlider,
        opacityValue,
        historySection,
        historyList,
        examplesSection,
        examplesGrid,
        projectorSection,
        disclaimerBanner,
    };
}

/**
 * One labeled bar per entry; the fill width is the score itself as a
 * percentage - nothing is rescaled, so bars visually sum to what the API sent.
 */
export function renderScoreBars(
    container: HTMLElement,
    scores: Record<string, number>,
    order?: string[],
): void {
    container.innerHTML = "";
    const names = order ?? Object.keys(scores);
    for (const name of names) {
        if (!(name in scores)) continue;
        const value = scores[name];
        const row = el("div", "score-row");
        row.dataset.class = name;
        row.appendChild(el("span", "score-label", name));
        const track = el("div", "score-track");
        const fill = el("div", "score-fill");
        fill.style.width = `${(value * 100).toFixed(1)}%`;
        track.appendChild(fill);
        row.appendChild(track);
        row.appendChild(el("span", "score-value", value.toFixed(3)));
        container.appendChild(row);
    }
}

export function renderHistory(list: HTMLElement, records: AnalysisRecord[]): void {
    list.innerHTML = "";
    if (records.length === 0) {
        list.appendChild(el("li", "history-empty", t("history_empty")));
        return;
    }
    for (const record of records) {
        const item = el("li", "history-entry");
        item.dataset.requestId = record.request_id;
        item.appendChild(el("span", "history-name", record.original_filename));
        item.appendChild(el("span", "history-summary", t(summaryKey(record.summary))));
        item.appendChild(el("span", "history-time", record.completed_at));
        list.appendChild(item);
    }
}

export function renderExamples(
    page: Page,
    entries: ExampleEntry[] | null,
    onPick: (entry: ExampleEntry) => void,
): void {
    if (!entries || entries.length === 0) {
        page.examplesSection.hidden = true;
        page.examplesGrid.innerHTML = "";
        return;
    }
    page.examplesSection.hidden = false;
    page.examplesGrid.innerHTML = "";
    for (const entry of entries) {
        const button = el("button", "example-thumb") as HTMLButtonElement;
        button.dataset.exampleId = entry.id;
        const img = el("img") as HTMLImageElement;
        img.src = entry.url;
        img.alt = entry.label;
        button.appendChild(img);
        button.appendChild(el("span", "example-label", entry.label));
        button.addEventListener("click", () => onPick(entry));
        page.examplesGrid.appendChild(button);
    }
}

/** Draw one state of the session; called after every transition. */
export function renderView(page: Page, view: AnalysisView): void {
    page.statusLine.hidden = view.state !== "uploading";
    page.statusLine.textContent = view.state === "uploading" ? t("uploading") : "";

    const hasOutcome = view.state === "done" || view.state === "error";
    page.resultSection.hidden = !hasOutcome && !view.previewUrl;

    if (view.previewUrl) {
        page.preview.src = view.previewUrl;
        page.preview.hidden = false;
    } else {
        page.preview.hidden = true;
    }

    const record = view.state === "done" ? view.record : null;
    page.noticeEl.hidden = view.state !== "error";
    page.retryButton.hidden = !(view.state === "error" && view.retriable);
    if (view.state === "error" && view.noticeKey) {
        page.noticeEl.textContent = t(view.noticeKey);
    }

    if (record) {
        page.summaryEl.hidden = false;
        page.summaryEl.textContent = t(summaryKey(record.summary));
        renderScoreBars(page.filterBars, record.filter_scores, ["valid", "nonvalid"]);
        if (record.valid && record.class_scores) {
            renderScoreBars(page.scoreBars, record.class_scores, CLASS_ORDER);
        } else {
            page.scoreBars.innerHTML = "";
        }
        const showOverlay = record.valid && !!record.cam_url && !!view.previewUrl;
        page.overlaySection.hidden = !showOverlay;
        if (showOverlay) {
            page.overlayBase.src = view.previewUrl as string;
            page.overlayHeat.src = record.cam_url as string;
            page.camFallback.hidden = true;
        }
    } else {
        page.summaryEl.hidden = true;
        page.summaryEl.textContent = "";
        page.filterBars.innerHTML = "";
        page.scoreBars.innerHTML = "";
        page.overlaySection.hidden = true;
    }

    applyOpacity(page.overlayHeat, view.overlayOpacity);
    page.opacitySlider.value = String(view.overlayOpacity);
    page.opacityValue.textContent = view.overlayOpacity.toFixed(2);

    renderHistory(page.historyList, view.history);
}
