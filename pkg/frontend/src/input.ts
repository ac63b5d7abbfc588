/** Keystroke buffering: speech-like chunking for typed text.
 *
 * Characters accumulate until a word boundary (whitespace) or until the
 * chunk-period timer fires, whichever comes first; a settings toggle
 * flushes on every keystroke instead.
 */

export interface KeystrokeBufferOptions {
  flushEveryKeystroke?: boolean;
}

export class KeystrokeBuffer {
  private pending = "";

  constructor(
    private readonly send: (text: string) => void,
    private readonly options: KeystrokeBufferOptions = {},
  ) {}

  onKeystroke(input: string): void {
    for (const ch of input) {
      if (this.options.flushEveryKeystroke) {
        this.send(ch);
        continue;
      }
      if (/\s/.test(ch)) {
        this.flush();
      } else {
        this.pending += ch;
      }
    }
  }

  /** Called on every chunk-period tick so a trailing partial word still ships. */
  onPeriod(): void {
    this.flush();
  }

  flush(): void {
    if (this.pending) {
      this.send(this.pending);
      this.pending = "";
    }
  }

  get buffered(): string {
    return this.pending;
  }
}
