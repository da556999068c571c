/** Debounced entity autocomplete with at most one request in flight.
 *
 * Rapid keystrokes collapse into a single query after the debounce delay;
 * if a query arrives while another is on the wire, only the newest one is
 * sent once the wire is free.
 */

import { ApiClient, EntitySuggestion } from "./api.js";

export class Autocomplete {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private queued: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly onSuggestions: (items: EntitySuggestion[]) => void,
    private readonly delayMs = 200,
    private readonly limit = 20,
  ) {}

  /** Call on every keystroke of the mention input. */
  onInput(prefix: string): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    const trimmed = prefix.trim();
    if (trimmed.length < 1) {
      this.onSuggestions([]);
      return;
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire(trimmed);
    }, this.delayMs);
  }

  private async fire(prefix: string): Promise<void> {
    if (this.inFlight) {
      this.queued = prefix;
      return;
    }
    this.inFlight = true;
    try {
      const items = await this.api.entities(prefix, this.limit);
      if (this.queued === null) {
        this.onSuggestions(items);
      }
    } catch {
      this.onSuggestions([]);
    } finally {
      this.inFlight = false;
      if (this.queued !== null) {
        const next = this.queued;
        this.queued = null;
        void this.fire(next);
      }
    }
  }
}
