/*
 * ---------------------------------------------------------------------------
 * Application entry point: mounts the DOM skeleton, wires events to the
 * session controller, and kicks off the startup fetches (history, examples).
 * ---------------------------------------------------------------------------
 */

import { fetchExampleBlob, fetchExamples, fetchHistory, setApiBase } from "./api.js";
import { mountSkeleton, renderExamples, renderView } from "./render.js";
import type { Page } from "./render.js";
import { SessionController } from "./state.js";
import type { ExampleEntry } from "./types.js";

export interface App {
    page: Page;
    controller: SessionController;
}

function submitFileList(controller: SessionController, files: FileList | null): void {
    if (files === null) return;
    for (let i = 0; i < files.length; i += 1) {
        const file = files[i];
        controller.submit(file, file.name);
    }
}

function wireUploads(page: Page, controller: SessionController): void {
    page.dropzone.addEventListener("dragover", (event) => {
        event.preventDefault();
        page.dropzone.classList.add("drag-active");
    });
    page.dropzone.addEventListener("dragleave", () => {
        page.dropzone.classList.remove("drag-active");
    });
    page.dropzone.addEventListener("drop", (event) => {
        event.preventDefault();
        page.dropzone.classList.remove("drag-active");
        submitFileList(controller, event.dataTransfer?.files ?? null);
    });
    page.dropzone.addEventListener("click", () => page.fileInput.click());
    page.fileInput.addEventListener("change", () => {
        submitFileList(controller, page.fileInput.files);
        page.fileInput.value = "";
    });
    page.retryButton.addEventListener("click", () => controller.retry());
}

function wireOverlay(page: Page, controller: SessionController): void {
    page.opacitySlider.addEventListener("input", () => {
        controller.setOpacity(parseFloat(page.opacitySlider.value));
    });
    // A heatmap that fails to load gets a placeholder with a manual retry.
    page.overlayHeat.addEventListener("error", () => {
        page.camFallback.hidden = false;
    });
    page.camRetryButton.addEventListener("click", () => {
        page.camFallback.hidden = true;
        const src = page.overlayHeat.src.split("#")[0];
        page.overlayHeat.src = `${src}#retry-${Date.now()}`;
    });
}

async function pickExample(controller: SessionController, entry: ExampleEntry): Promise<void> {
    const blob = await fetchExampleBlob(entry.url);
    if (blob === null) return;
    controller.submit(blob, `${entry.id}.png`);
}

export async function startApp(root: HTMLElement, apiBase = ""): Promise<App> {
    setApiBase(apiBase);
    const page = mountSkeleton(root);
    const controller = new SessionController((view) => renderView(page, view));
    renderView(page, controller.view);

    wireUploads(page, controller);
    wireOverlay(page, controller);

    const history = await fetchHistory();
    if (history !== null) controller.seedHistory(history);

    const examples = await fetchExamples();
    renderExamples(page, examples, (entry) => void pickExample(controller, entry));

    return { page, controller };
}

// Auto-start when loaded as the page module; tests call startApp directly.
const mountPoint = typeof document !== "undefined" ? document.getElementById("app") : null;
if (mountPoint !== null) {
    void startApp(mountPoint);
}
