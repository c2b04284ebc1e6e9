/** Hand-rolled SVG chart primitives: scales, axes, series, markers. */

export interface Margins {
  top: number;
  right: number;
  bottom: number;
  left: number;
}

export const DEFAULT_MARGINS: Margins = { top: 34, right: 16, bottom: 42, left: 56 };

export type Scale = (v: number) => number;

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function logScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const l0 = Math.log10(d0);
  const span = Math.log10(d1) - l0 || 1;
  return (v) => r0 + ((Math.log10(v) - l0) / span) * (r1 - r0);
}

export function niceLinearTicks(lo: number, hi: number, count = 6): number[] {
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (span / count) / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const s = step * mult;
  const start = Math.ceil(lo / s) * s;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12 * span; v += s) {
    ticks.push(Math.abs(v) < 1e-12 * span ? 0 : v);
  }
  return ticks;
}

export function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.ceil(Math.log10(lo)); Math.pow(10, e) <= hi * (1 + 1e-9); e++) {
    ticks.push(Math.pow(10, e));
  }
  return ticks.length >= 2 ? ticks : [lo, hi];
}

export function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(0).replace("e", "e");
  if (Number.isInteger(v)) return String(v);
  return String(Number(v.toPrecision(3)));
}

const esc = (s: string) => s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export interface SeriesStyle {
  color: string;
  width?: number;
  dash?: string;
  opacity?: number;
  marker?: boolean;
}

/** Qualitative palette; seeds of one model share a hue. */
export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

export class Chart {
  parts: string[] = [];
  plot: { x0: number; x1: number; y0: number; y1: number };

  constructor(
    public width: number,
    public height: number,
    public margins: Margins = DEFAULT_MARGINS,
  ) {
    this.plot = {
      x0: margins.left,
      x1: width - margins.right,
      y0: height - margins.bottom,
      y1: margins.top,
    };
  }

  title(text: string): void {
    this.parts.push(
      `<text x="${this.width / 2}" y="18" text-anchor="middle" font-size="13" font-weight="bold">${esc(text)}</text>`,
    );
  }

  frame(): void {
    const { x0, x1, y0, y1 } = this.plot;
    this.parts.push(
      `<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" fill="none" stroke="#333" stroke-width="1"/>`,
    );
  }

  xAxis(scale: Scale, ticks: number[], label: string): void {
    const { y0 } = this.plot;
    for (const t of ticks) {
      const x = scale(t);
      this.parts.push(`<line x1="${x}" y1="${y0}" x2="${x}" y2="${y0 + 4}" stroke="#333"/>`);
      this.parts.push(
        `<text x="${x}" y="${y0 + 16}" text-anchor="middle" font-size="10">${esc(fmt(t))}</text>`,
      );
    }
    this.parts.push(
      `<text x="${(this.plot.x0 + this.plot.x1) / 2}" y="${y0 + 32}" text-anchor="middle" font-size="11">${esc(label)}</text>`,
    );
  }

  yAxis(scale: Scale, ticks: number[], label: string): void {
    const { x0, y0, y1 } = this.plot;
    for (const t of ticks) {
      const y = scale(t);
      this.parts.push(`<line x1="${x0 - 4}" y1="${y}" x2="${x0}" y2="${y}" stroke="#333"/>`);
      this.parts.push(
        `<line x1="${x0}" y1="${y}" x2="${this.plot.x1}" y2="${y}" stroke="#ddd" stroke-width="0.5"/>`,
      );
      this.parts.push(
        `<text x="${x0 - 6}" y="${y + 3}" text-anchor="end" font-size="10">${esc(fmt(t))}</text>`,
      );
    }
    const ym = (y0 + y1) / 2;
    this.parts.push(
      `<text x="14" y="${ym}" transform="rotate(-90 14 ${ym})" text-anchor="middle" font-size="11">${esc(label)}</text>`,
    );
  }

  line(xs: number[], ys: number[], style: SeriesStyle): void {
    const pts = xs.map((x, i) => `${x.toFixed(2)},${ys[i].toFixed(2)}`).join(" ");
    const dash = style.dash ? ` stroke-dasharray="${style.dash}"` : "";
    const op = style.opacity !== undefined ? ` opacity="${style.opacity}"` : "";
    this.parts.push(
      `<polyline points="${pts}" fill="none" stroke="${style.color}" stroke-width="${style.width ?? 1.4}"${dash}${op}/>`,
    );
    if (style.marker) {
      for (let i = 0; i < xs.length; i++) {
        this.parts.push(
          `<circle cx="${xs[i].toFixed(2)}" cy="${ys[i].toFixed(2)}" r="2" fill="${style.color}"${op}/>`,
        );
      }
    }
  }

  band(xs: number[], yLo: number[], yHi: number[], color: string, opacity = 0.18): void {
    const fwd = xs.map((x, i) => `${x.toFixed(2)},${yHi[i].toFixed(2)}`);
    const bwd = xs.map((x, i) => `${x.toFixed(2)},${yLo[i].toFixed(2)}`).reverse();
    this.parts.push(
      `<polygon points="${fwd.concat(bwd).join(" ")}" fill="${color}" opacity="${opacity}" stroke="none"/>`,
    );
  }

  /** Dashed vertical reference marker (e.g. the training context length). */
  verticalMarker(x: number, label: string): void {
    const { y0, y1 } = this.plot;
    this.parts.push(
      `<line x1="${x.toFixed(2)}" y1="${y0}" x2="${x.toFixed(2)}" y2="${y1}" stroke="#444" stroke-width="1" stroke-dasharray="5,4" class="k-train-marker"/>`,
    );
    if (label) {
      this.parts.push(
        `<text x="${(x + 4).toFixed(2)}" y="${y1 + 12}" font-size="9" fill="#444">${esc(label)}</text>`,
      );
    }
  }

  legend(entries: { label: string; style: SeriesStyle }[]): void {
    const x = this.plot.x0 + 8;
    let y = this.plot.y1 + 10;
    for (const e of entries) {
      const dash = e.style.dash ? ` stroke-dasharray="${e.style.dash}"` : "";
      this.parts.push(
        `<line x1="${x}" y1="${y - 3}" x2="${x + 18}" y2="${y - 3}" stroke="${e.style.color}" stroke-width="${e.style.width ?? 1.4}"${dash}/>`,
      );
      this.parts.push(`<text x="${x + 22}" y="${y}" font-size="9">${esc(e.label)}</text>`);
      y += 12;
    }
  }

  note(text: string): void {
    this.parts.push(
      `<text x="${(this.plot.x0 + this.plot.x1) / 2}" y="${(this.plot.y0 + this.plot.y1) / 2}" text-anchor="middle" font-size="12" fill="#777">${esc(text)}</text>`,
    );
  }

  render(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" ` +
      `viewBox="0 0 ${this.width} ${this.height}" font-family="Helvetica, Arial, sans-serif">\n` +
      `<rect width="${this.width}" height="${this.height}" fill="white"/>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}
