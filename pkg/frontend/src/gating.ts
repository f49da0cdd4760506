import { QuestionId, TrialAnswers } from "./types.js";

// Answers that must be explained in the comment box when negative.
const COMMENT_REQUIRED: QuestionId[] = ["q2_timbre", "q3_naturalness"];

/**
 * Per-trial gating state machine.
 *
 * Answer controls unlock only after both sources have finished playing
 * naturally; the submit control additionally requires all three answers
 * and, for negative timbre/naturalness answers, a non-empty comment.
 */
export class TrialGate {
    private completions = new Set<1 | 2>();
    private answers = new Map<QuestionId, boolean>();
    private comment = "";

    markNaturalCompletion(source: 1 | 2): void {
        this.completions.add(source);
    }

    get answersEnabled(): boolean {
        return this.completions.has(1) && this.completions.has(2);
    }

    setAnswer(question: QuestionId, value: boolean): void {
        if (!this.answersEnabled) {
            throw new Error("answers are locked until both sources finish");
        }
        this.answers.set(question, value);
    }

    getAnswer(question: QuestionId): boolean | undefined {
        return this.answers.get(question);
    }

    setComment(text: string): void {
        this.comment = text;
    }

    get commentRequired(): boolean {
        return COMMENT_REQUIRED.some((q) => this.answers.get(q) === false);
    }

    get canSubmit(): boolean {
        if (!this.answersEnabled || this.answers.size < 3) {
            return false;
        }
        return !this.commentRequired || this.comment.trim().length > 0;
    }

    buildResponse(submissionToken: string): TrialAnswers {
        if (!this.canSubmit) {
            throw new Error("trial is not ready to submit");
        }
        return {
            q1_rhythm: this.answers.get("q1_rhythm")!,
            q2_timbre: this.answers.get("q2_timbre")!,
            q3_naturalness: this.answers.get("q3_naturalness")!,
            comment: this.comment.trim(),
            submission_token: submissionToken,
        };
    }
}
