// Append-only session history with a navigation cursor.
//
// Entries are never removed or replaced within a session; moving back
// and committing again appends rather than truncating, so every state
// the user ever committed stays reachable.

export class History<T> {
    private entries: T[] = [];
    private cursor = -1;

    get length(): number {
        return this.entries.length;
    }

    get position(): number {
        return this.cursor;
    }

    current(): T | null {
        return this.cursor >= 0 ? this.entries[this.cursor] : null;
    }

    push(entry: T): void {
        this.entries.push(entry);
        this.cursor = this.entries.length - 1;
    }

    canBack(): boolean {
        return this.cursor > 0;
    }

    canForward(): boolean {
        return this.cursor >= 0 && this.cursor < this.entries.length - 1;
    }

    back(): T | null {
        if (!this.canBack()) return null;
        this.cursor--;
        return this.entries[this.cursor];
    }

    forward(): T | null {
        if (!this.canForward()) return null;
        this.cursor++;
        return this.entries[this.cursor];
    }

    all(): readonly T[] {
        return this.entries;
    }
}
