import { describe, expect, it } from "vitest";

import {
    applyOpacity,
    clampOpacity,
    compositePixel,
    DEFAULT_OPACITY,
} from "../src/overlay.js";
import type { Rgb } from "../src/overlay.js";

describe("clampOpacity", () => {
    it("passes in-range values through", () => {
        expect(clampOpacity(0.3)).toBe(0.3);
        expect(clampOpacity(0)).toBe(0);
        expect(clampOpacity(1)).toBe(1);
    });

    it("clamps out-of-range values to the endpoints", () => {
        expect(clampOpacity(-0.5)).toBe(0);
        expect(clampOpacity(1.5)).toBe(1);
    });

    it("falls back to the default for NaN", () => {
        expect(clampOpacity(Number.NaN)).toBe(DEFAULT_OPACITY);
    });
});

describe("compositePixel", () => {
    const base: Rgb = [100, 100, 100];
    const top: Rgb = [0, 0, 128];

    it("matches the service blend rule at the midpoint", () => {
        expect(compositePixel(base, top, 0.5)).toEqual([50, 50, 114]);
    });

    it("returns the base pixel untouched at opacity zero", () => {
        expect(compositePixel(base, top, 0)).toEqual(base);
    });

    it("returns the overlay pixel at opacity one", () => {
        expect(compositePixel(base, top, 1)).toEqual(top);
    });

    it("uses the default blend weight of 0.4", () => {
        expect(DEFAULT_OPACITY).toBe(0.4);
        expect(compositePixel([200, 0, 0], [0, 0, 200], DEFAULT_OPACITY)).toEqual([
            120, 0, 80,
        ]);
    });
});

describe("applyOpacity", () => {
    it("writes the clamped value into the element style", () => {
        const img = document.createElement("img");
        expect(applyOpacity(img, 0.25)).toBe(0.25);
        expect(img.style.opacity).toBe("0.25");
        expect(applyOpacity(img, 7)).toBe(1);
        expect(img.style.opacity).toBe("1");
    });
});
