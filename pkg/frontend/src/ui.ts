/** DOM wiring: connects the session state and autocomplete to the page. */

import { ApiClient, EntitySuggestion } from "./api.js";
import { Autocomplete } from "./autocomplete.js";
import { SessionState } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

export function mount(baseUrl = ""): SessionState {
  const api = new ApiClient(baseUrl);
  const session = new SessionState(api);

  const transcript = el<HTMLUListElement>("transcript");
  const recList = el<HTMLOListElement>("recommendations");
  const banner = el<HTMLDivElement>("banner");
  const tagList = el<HTMLUListElement>("tags");
  const textInput = el<HTMLInputElement>("utterance");
  const mentionInput = el<HTMLInputElement>("mention");
  const dropdown = el<HTMLUListElement>("suggestions");
  const kInput = el<HTMLInputElement>("topk");
  const sendButton = el<HTMLButtonElement>("send");
  const resetButton = el<HTMLButtonElement>("reset");

  function render(): void {
    banner.textContent = session.error ?? "";
    banner.hidden = session.error === null;

    transcript.replaceChildren(
      ...session.turns.map((turn) => {
        const li = document.createElement("li");
        li.className = turn.role;
        const mentions = turn.mentions.length
          ? ` [${turn.mentions.join(", ")}]`
          : "";
        li.textContent = `${turn.role}: ${turn.text}${mentions}`;
        return li;
      }),
    );

    tagList.replaceChildren(
      ...session.pendingMentions.map((mention, index) => {
        const li = document.createElement("li");
        li.textContent = mention.surfaceForm;
        li.title = "click to remove";
        li.addEventListener("click", () => {
          session.untagMention(index);
          render();
        });
        return li;
      }),
    );

    recList.replaceChildren(
      ...session.recommendations.map((item) => {
        const li = document.createElement("li");
        li.textContent = `${item.surface_form} (${item.score.toFixed(4)})`;
        li.title = "click to tag for your next turn";
        li.addEventListener("click", () => {
          session.pickRecommendation(item);
          render();
        });
        return li;
      }),
    );
  }

  function renderSuggestions(items: EntitySuggestion[]): void {
    dropdown.replaceChildren(
      ...items.map((suggestion) => {
        const li = document.createElement("li");
        li.textContent = suggestion.surface_form;
        // items are recommendable, plain entities are context only
        li.className = suggestion.is_item ? "item" : "entity";
        li.addEventListener("click", () => {
          session.tagMention({
            id: suggestion.id,
            surfaceForm: suggestion.surface_form,
          });
          mentionInput.value = "";
          dropdown.replaceChildren();
          render();
        });
        return li;
      }),
    );
  }

  const autocomplete = new Autocomplete(api, renderSuggestions);
  mentionInput.addEventListener("input", () => {
    autocomplete.onInput(mentionInput.value);
  });

  kInput.value = String(session.k);
  kInput.addEventListener("change", () => {
    const k = Number.parseInt(kInput.value, 10);
    if (Number.isFinite(k) && k >= 1) {
      session.k = k;
    } else {
      kInput.value = String(session.k);
    }
  });

  sendButton.addEventListener("click", () => {
    void session.submitTurn(textInput.value).then(() => {
      textInput.value = "";
      render();
    });
  });

  resetButton.addEventListener("click", () => {
    void session.reset().then(render);
  });

  void session.reset().then(render);
  return session;
}
