/**
 * Overlay math for the activation-map viewer.
 *
 * The service ships the activation map as a pre-rendered overlay image; the
 * viewer stacks it above the raw upload and drives its layer opacity with the
 * slider. compositePixel states the arithmetic of that stacking - identical
 * to the service's own blend rule - so tests can pin exact pixel values
 * without a canvas.
 */

export const DEFAULT_OPACITY = 0.4;

export type Rgb = [number, number, number];

export function clampOpacity(value: number): number {
    if (Number.isNaN(value)) return DEFAULT_OPACITY;
    return Math.min(1, Math.max(0, value));
}

/**
 * One channel-wise alpha composite: round((1 - alpha) * base + alpha * top).
 * alpha 0 returns the base pixel untouched; alpha 1 the overlay pixel.
 */
export function compositePixel(base: Rgb, top: Rgb, alpha: number): Rgb {
    const a = clampOpacity(alpha);
    const mix = (b: number, t: number) => Math.round((1 - a) * b + a * t);
    return [mix(base[0], top[0]), mix(base[1], top[1]), mix(base[2], top[2])];
}

/** Apply a slider position to the stacked overlay element. */
export function applyOpacity(overlayImg: HTMLElement, value: number): number {
    const clamped = clampOpacity(value);
    overlayImg.style.opacity = String(clamped);
    return clamped;
}
