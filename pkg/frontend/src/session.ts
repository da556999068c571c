/** Client-side conversation state.
 *
 * The service is stateless, so the full ordered mention sequence is the
 * session: every recommendation request sends the concatenation of all
 * tagged mentions across turns, in entry order. At most one recommend
 * request is in flight; a newer submission wins over a stale response.
 */

import { ApiClient, RecommendedItem } from "./api.js";

export type Role = "seeker" | "recommender";

export interface Turn {
  role: Role;
  text: string;
  mentions: string[];
}

export interface TaggedMention {
  id: string;
  surfaceForm: string;
}

export class SessionState {
  turns: Turn[] = [];
  recommendations: RecommendedItem[] = [];
  /** Mentions tagged in the composer, destined for the next turn. */
  pendingMentions: TaggedMention[] = [];
  k = 10;
  /** Non-blocking banner text; null when the service is reachable. */
  error: string | null = null;
  modelVersion = "";

  private requestCounter = 0;

  constructor(private readonly api: ApiClient) {}

  /** Ordered concatenation of tagged mentions across all turns. */
  mentionSequence(): string[] {
    return this.turns.flatMap((turn) => turn.mentions);
  }

  tagMention(mention: TaggedMention): void {
    this.pendingMentions.push(mention);
  }

  untagMention(index: number): void {
    this.pendingMentions.splice(index, 1);
  }

  /** Click handler for a recommended item: tag it for the next turn. */
  pickRecommendation(item: RecommendedItem): void {
    this.tagMention({ id: item.id, surfaceForm: item.surface_form });
  }

  /** Append the composed turn and refresh recommendations. */
  async submitTurn(text: string): Promise<void> {
    const mentions = this.pendingMentions.map((m) => m.id);
    this.pendingMentions = [];
    this.turns.push({ role: "seeker", text, mentions });
    await this.refresh();
  }

  /** Clear the dialog and fetch the cold-start list. */
  async reset(): Promise<void> {
    this.turns = [];
    this.pendingMentions = [];
    await this.refresh();
  }

  private async refresh(): Promise<void> {
    const requestId = ++this.requestCounter;
    try {
      const response = await this.api.recommend(this.mentionSequence(), this.k);
      if (requestId !== this.requestCounter) {
        return; // a newer request already went out: latest wins
      }
      this.recommendations = response.items;
      this.modelVersion = response.model_version;
      this.error = null;
    } catch (err) {
      if (requestId !== this.requestCounter) {
        return;
      }
      this.error = `service unreachable: ${String(err)}`;
    }
  }
}
