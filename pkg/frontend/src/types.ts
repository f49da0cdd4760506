export type QuestionId = "q1_rhythm" | "q2_timbre" | "q3_naturalness";

export interface QuestionOption {
    label: string;
    value: boolean;
}

export interface Question {
    id: QuestionId;
    text: string;
    options: QuestionOption[];
}

export interface TrialDescriptor {
    trial_id: string;
    source1_url: string;
    source2_url: string;
    questions: Question[];
    answered: number;
    total: number;
}

export interface CompletionMarker {
    complete: true;
    answered: number;
    total: number;
}

export type NextTrial = TrialDescriptor | CompletionMarker;

export function isComplete(t: NextTrial): t is CompletionMarker {
    return (t as CompletionMarker).complete === true;
}

export interface TrialAnswers {
    q1_rhythm: boolean;
    q2_timbre: boolean;
    q3_naturalness: boolean;
    comment: string;
    submission_token: string;
}

export interface ApiError {
    code: string;
    reason: string;
}
