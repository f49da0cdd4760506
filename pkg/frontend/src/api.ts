import { ApiError, NextTrial, TrialAnswers } from "./types.js";

export class StudyApiError extends Error {
    constructor(
        public code: string,
        public reason: string,
        public status: number,
    ) {
        super(reason);
    }
}

/**
 * Thin client for the study service.
 *
 * Submission retries reuse the same submission token, so a response that
 * was recorded but whose acknowledgment got lost is absorbed server-side
 * instead of being counted twice.
 */
export class StudyClient {
    constructor(
        private baseUrl: string,
        private fetchFn: typeof fetch = fetch.bind(globalThis),
    ) {}

    private async request(path: string, init?: RequestInit): Promise<unknown> {
        const response = await this.fetchFn(this.baseUrl + path, init);
        const body = await response.json();
        if (!response.ok) {
            const err = body as ApiError;
            throw new StudyApiError(err.code, err.reason, response.status);
        }
        return body;
    }

    private post(path: string, body: unknown): Promise<unknown> {
        return this.request(path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
        });
    }

    async register(
        studyId: string,
        participantId?: string,
    ): Promise<{ participant_id: string; total_trials: number }> {
        const body = participantId ? { participant_id: participantId } : {};
        return (await this.post(
            `/api/studies/${studyId}/participants`,
            body,
        )) as { participant_id: string; total_trials: number };
    }

    async nextTrial(studyId: string, participant: string): Promise<NextTrial> {
        const query = new URLSearchParams({ participant });
        return (await this.request(
            `/api/studies/${studyId}/trials/next?${query}`,
        )) as NextTrial;
    }

    async playbackComplete(trialId: string, source: 1 | 2): Promise<void> {
        await this.post(`/api/trials/${trialId}/playback-complete`, { source });
    }

    async submitResponse(
        trialId: string,
        answers: TrialAnswers,
        maxAttempts = 3,
    ): Promise<void> {
        let lastError: unknown;
        for (let attempt = 0; attempt < maxAttempts; attempt++) {
            try {
                await this.post(`/api/trials/${trialId}/response`, answers);
                return;
            } catch (err) {
                if (err instanceof StudyApiError) {
                    throw err; // rejection, not a transport failure
                }
                lastError = err;
            }
        }
        throw lastError;
    }
}

export function newSubmissionToken(): string {
    const bytes = new Uint8Array(12);
    crypto.getRandomValues(bytes);
    return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}
