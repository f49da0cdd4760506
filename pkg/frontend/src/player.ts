/**
 * Wraps an audio element and reports *natural* playback completions.
 *
 * A completion only counts when the listener heard the clip end on its
 * own: any seek since the last play start disqualifies the run, so
 * dragging the scrubber to the end does not unlock the answers. Seeking
 * is also actively reverted during the first listen; replays may scrub
 * freely.
 */
export class PlaybackMonitor {
    firstListenDone = false;
    private seekedThisRun = false;
    private lastTime = 0;

    constructor(
        private audio: HTMLAudioElement,
        private onNaturalEnd: () => void,
    ) {
        audio.addEventListener("play", () => {
            this.seekedThisRun = false;
        });
        audio.addEventListener("timeupdate", () => {
            this.lastTime = audio.currentTime;
        });
        audio.addEventListener("seeking", () => {
            this.seekedThisRun = true;
            if (!this.firstListenDone) {
                audio.currentTime = this.lastTime;
            }
        });
        audio.addEventListener("ended", () => {
            if (this.seekedThisRun) {
                return;
            }
            this.firstListenDone = true;
            this.onNaturalEnd();
        });
    }

    get scrubbingAllowed(): boolean {
        return this.firstListenDone;
    }
}
