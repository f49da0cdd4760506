import { StudyClient, newSubmissionToken } from "./api.js";
import { TrialGate } from "./gating.js";
import { PlaybackMonitor } from "./player.js";
import { QuestionId, TrialDescriptor, isComplete } from "./types.js";

/**
 * Renders one trial at a time into a container and walks the participant
 * through the full session. All strings (question text, option labels)
 * come from the server; the page itself never learns which conversion
 * system produced a clip.
 */
export class StudyApp {
    constructor(
        private root: HTMLElement,
        private client: StudyClient,
        private studyId: string,
        private participant: string,
    ) {}

    async run(): Promise<void> {
        const next = await this.client.nextTrial(this.studyId, this.participant);
        if (isComplete(next)) {
            this.renderCompletion(next.answered, next.total);
            return;
        }
        this.renderTrial(next);
    }

    private renderCompletion(answered: number, total: number): void {
        this.root.innerHTML = "";
        const done = document.createElement("p");
        done.className = "completion";
        done.textContent =
            `All done. Thank you! You answered ${answered} of ${total} pairs.`;
        this.root.appendChild(done);
    }

    private renderTrial(trial: TrialDescriptor): void {
        this.root.innerHTML = "";
        const gate = new TrialGate();

        const progress = document.createElement("p");
        progress.className = "progress";
        progress.textContent = `${trial.answered} / ${trial.total}`;
        this.root.appendChild(progress);

        const instructions = document.createElement("p");
        instructions.className = "instructions";
        instructions.textContent =
            "Listen to both sources all the way through. " +
            "You may replay the audio if needed.";
        this.root.appendChild(instructions);

        const players: HTMLAudioElement[] = [];
        ([1, 2] as const).forEach((source) => {
            const label = document.createElement("h3");
            label.textContent = `Source ${source}`;
            this.root.appendChild(label);

            const audio = document.createElement("audio");
            audio.controls = true;
            audio.src = source === 1 ? trial.source1_url : trial.source2_url;
            audio.dataset.source = String(source);
            this.root.appendChild(audio);
            players.push(audio);

            new PlaybackMonitor(audio, () => {
                gate.markNaturalCompletion(source);
                void this.client.playbackComplete(trial.trial_id, source);
                refresh();
            });
        });

        const answerInputs: HTMLInputElement[] = [];
        for (const question of trial.questions) {
            const fieldset = document.createElement("fieldset");
            fieldset.dataset.question = question.id;
            const legend = document.createElement("legend");
            legend.textContent = question.text;
            fieldset.appendChild(legend);
            for (const option of question.options) {
                const label = document.createElement("label");
                const input = document.createElement("input");
                input.type = "radio";
                input.name = question.id;
                input.value = String(option.value);
                input.disabled = true;
                input.addEventListener("change", () => {
                    gate.setAnswer(question.id as QuestionId, option.value);
                    refresh();
                });
                answerInputs.push(input);
                label.appendChild(input);
                label.appendChild(document.createTextNode(option.label));
                fieldset.appendChild(label);
            }
            this.root.appendChild(fieldset);
        }

        const comment = document.createElement("textarea");
        comment.className = "comment";
        comment.placeholder = "Comment";
        comment.disabled = true;
        comment.addEventListener("input", () => {
            gate.setComment(comment.value);
            refresh();
        });
        this.root.appendChild(comment);

        const submit = document.createElement("button");
        submit.className = "submit";
        submit.textContent = "Submit";
        submit.disabled = true;
        this.root.appendChild(submit);

        const error = document.createElement("p");
        error.className = "error";
        this.root.appendChild(error);

        const refresh = () => {
            const unlocked = gate.answersEnabled;
            for (const input of answerInputs) {
                input.disabled = !unlocked;
            }
            comment.disabled = !unlocked;
            comment.required = gate.commentRequired;
            submit.disabled = !gate.canSubmit;
        };

        const token = newSubmissionToken();
        submit.addEventListener("click", async () => {
            submit.disabled = true;
            try {
                await this.client.submitResponse(
                    trial.trial_id,
                    gate.buildResponse(token),
                );
                await this.run();
            } catch (err) {
                // surface the server's reason verbatim and let them retry
                error.textContent =
                    err instanceof Error ? err.message : String(err);
                submit.disabled = !gate.canSubmit;
            }
        });
    }
}
